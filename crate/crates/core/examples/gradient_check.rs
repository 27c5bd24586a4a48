//! Central-difference checks of the DI-VAE, DI-VST and latent-conditioned
//! HRED gradients on random toy instances.

use datml::compute::{finite_diff_check, ParamSet};
use datml::corpus::{tokenize, Vocab};
use datml::hred::{HredConfig, HredExample, HredInput, HredModel, LatentShape};
use datml::laed::{LaedConfig, LaedKind, LaedModel, LatentCode, LatentOptions, LatentSampling, Triple, VstTerms};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn utterance(rng: &mut ChaCha8Rng, v: usize) -> Vec<usize> {
    (0..rng.gen_range(1..4)).map(|_| rng.gen_range(4..v)).collect()
}

fn main() -> datml::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LaedConfig {
        vocab_size: 9,
        embed_dim: 4,
        hidden_dim: 5,
        y: 2,
        k: 3,
        temperature: 1.0,
    };
    let opts = LatentOptions {
        sampling: LatentSampling::Relaxed,
        noise_seed: 5,
    };

    let vae = LaedModel::new(LaedKind::Divae, cfg.clone(), 2)?;
    let batch: Vec<_> = (0..3).map(|_| utterance(&mut rng, 9)).collect();
    let mut p = vae.params.clone();
    let lg = vae.divae_graph(&p, &batch, &opts)?;
    lg.graph.backward_into(lg.loss, &mut p)?;
    let r = finite_diff_check(|q: &ParamSet| Ok::<_, datml::Error>(vae.divae_graph(q, &batch, &opts)?.value()), &p, 1e-3)?;
    println!("DI-VAE  max rel err {:.2e} over {} values", r.max_rel_error, r.values_checked);

    let vst = LaedModel::new(LaedKind::Divst, cfg, 3)?;
    let triples: Vec<_> = (0..3)
        .map(|_| Triple {
            prev: utterance(&mut rng, 9),
            current: utterance(&mut rng, 9),
            next: utterance(&mut rng, 9),
        })
        .collect();
    let mut p = vst.params.clone();
    let lg = vst.divst_graph(&p, &triples, &opts, VstTerms::default())?;
    lg.graph.backward_into(lg.loss, &mut p)?;
    let r = finite_diff_check(
        |q: &ParamSet| Ok::<_, datml::Error>(vst.divst_graph(q, &triples, &opts, VstTerms::default())?.value()),
        &p,
        1e-3,
    )?;
    println!("DI-VST  max rel err {:.2e} over {} values", r.max_rel_error, r.values_checked);

    let words: Vec<String> = tokenize("i want food in the north please cheap");
    let vocab = Vocab::build([words.as_slice()]);
    let model = HredModel::new(
        HredConfig {
            vocab_size: vocab.len(),
            embed_dim: 4,
            hidden_dim: 5,
            dropout: 0.3,
            latent: Some(LatentShape { y: 2, k: 3 }),
            max_context: 2,
        },
        4,
    )?;
    let input = HredInput::new(&vocab, &[tokenize("i want food")], &tokenize("in the east please"), 2);
    let example = HredExample {
        target: input.target_ids(&vocab, &tokenize("cheap food in the east")),
        input,
        latents: Some((LatentCode::new(vec![0, 2], 3)?, LatentCode::new(vec![1, 1], 3)?)),
    };
    let batch = [example];
    let mut p = model.params.clone();
    let (g, loss) = model.loss_graph(&p, &batch, Some(9))?;
    g.backward_into(loss, &mut p)?;
    let r = finite_diff_check(
        |q: &ParamSet| {
            let (g, l) = model.loss_graph(q, &batch, Some(9))?;
            Ok::<_, datml::Error>(g.scalar(l))
        },
        &p,
        1e-3,
    )?;
    println!("HRED    max rel err {:.2e} over {} values (worst {})", r.max_rel_error, r.values_checked, r.worst_param);
    Ok(())
}
