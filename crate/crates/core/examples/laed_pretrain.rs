//! Pre-trains DI-VAE, DI-VST and the system-latent predictor on a small
//! corpus and prints a few recognised codes.

use datml::corpus::{build_vocab, generate_corpus, CorpusSpec};
use datml::laed::{pretrain_laed, PretrainConfig};

fn main() -> datml::Result<()> {
    let (corpus, _) = generate_corpus(&CorpusSpec::toy(30, 271))?;
    let vocab = build_vocab(&corpus.dialogues);
    let config = PretrainConfig {
        embed_dim: 16,
        hidden_dim: 32,
        y: 4,
        k: 5,
        epochs: 4,
        predictor_epochs: 4,
        learning_rate: 5e-3,
        ..PretrainConfig::default()
    };
    let (laed, log) = pretrain_laed(&corpus.dialogues, &vocab, &config, 271)?;
    println!("DI-VAE loss      {:?}", rounded(&log.divae_loss));
    println!("DI-VAE accuracy  {:?}", rounded(&log.divae_accuracy));
    println!("DI-VST loss      {:?}", rounded(&log.divst_loss));
    println!("predictor loss   {:?}", rounded(&log.predictor_loss));

    let d = &corpus.dialogues[0];
    for t in d.turns.iter().take(4) {
        let ids = vocab.encode(&t.tokens());
        println!(
            "{:<60} vae {:?} vst {:?}",
            t.text,
            laed.divae.recognize(&ids)?.values(),
            laed.divst.recognize(&ids)?.values()
        );
    }
    Ok(())
}

fn rounded(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
