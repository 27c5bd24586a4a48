//! Generates the four-domain toy corpus and shows the held-out split.
//!
//! cargo run --example gen_corpus -- [dialogues_per_domain] [target]

use datml::corpus::{generate_corpus, sample_fewshot, split_for_target, CorpusSpec, SplitFractions};

fn main() -> datml::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_domain: usize = args.next().map_or(40, |a| a.parse().expect("dialogues per domain"));
    let target = args.next().unwrap_or_else(|| "taxi".into());

    let (corpus, kb) = generate_corpus(&CorpusSpec::toy(per_domain, 271))?;
    println!("{} dialogues over {:?}", corpus.len(), corpus.domains());
    for name in kb.domain_names() {
        println!("  kb {name}: {} rows", kb.domain(name).map_or(0, <[_]>::len));
    }

    let d = &corpus.dialogues[0];
    println!("\n{} {:?}", d.dialogue_id, d.domains);
    for t in &d.turns {
        println!("  {:?} [{}] {}  {:?}", t.speaker, t.domain, t.text, t.entities);
    }

    let split = split_for_target(&corpus, &target, SplitFractions::default(), 271)?;
    let leaked = split.source.iter().filter(|d| d.has_domain(&target)).count();
    println!(
        "\ntarget {target}: source {} / pool {} / val {} / test {}; leaked {leaked}",
        split.source.len(),
        split.train_pool.len(),
        split.validation.len(),
        split.test.len()
    );
    for f in [0.01, 0.05, 0.1] {
        println!("  {:>4.0}% few-shot -> {} dialogues", f * 100.0, sample_fewshot(&split.train_pool, f, 271)?.len());
    }
    Ok(())
}
