//! Trains a pointer-generator HRED on a handful of dialogues and decodes
//! responses, including a context word that is not in the vocabulary.

use datml::cli::build_examples;
use datml::compute::OptimizerState;
use datml::corpus::{build_vocab, generate_corpus, tokenize, CorpusSpec};
use datml::hred::{HredConfig, HredExample, HredInput, HredModel};

fn main() -> datml::Result<()> {
    let (corpus, _) = generate_corpus(&CorpusSpec::toy(6, 3))?;
    let dialogues = &corpus.dialogues[..8];
    let vocab = build_vocab(dialogues);
    let examples: Vec<HredExample> = build_examples(dialogues, &vocab, None, 2)?.into_iter().map(|(_, e)| e).collect();
    let mut model = HredModel::new(
        HredConfig {
            vocab_size: vocab.len(),
            embed_dim: 16,
            hidden_dim: 32,
            dropout: 0.0,
            latent: None,
            max_context: 2,
        },
        1,
    )?;
    let mut opt = OptimizerState::adam(0.01);
    for step in 0..=120 {
        let (g, loss) = model.loss_graph(&model.params, &examples, Some(step))?;
        if step % 30 == 0 {
            let (hits, total) = model.token_accuracy(&examples)?;
            println!("step {step:>3}  loss {:.3}  token acc {:.3}", g.scalar(loss), hits as f64 / total as f64);
        }
        model.params.zero_grad();
        g.backward_into(loss, &mut model.params)?;
        opt.step(&mut model.params)?;
    }

    let d = &dialogues[0];
    let user = d.turns[0].tokens();
    let input = HredInput::new(&vocab, &[], &user, 2);
    let out = model.generate(&input, None, 20)?;
    println!("\nuser:  {}\nsys:   {}\ngold:  {}", d.turns[0].text, input.decode(&vocab, &out).join(" "), d.turns[1].text);

    let novel = tokenize("i need a place called zanzibar");
    let input = HredInput::new(&vocab, &[], &novel, 2);
    println!("\noov words {:?} get ids {:?}", input.oov, &input.source_ext[input.source_ext.len() - 1..]);
    println!("sys:   {}", input.decode(&vocab, &model.generate(&input, None, 20)?).join(" "));
    Ok(())
}
