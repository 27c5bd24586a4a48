//! The whole pipeline through the library: corpus, LAED pre-training,
//! source training, few-shot fine-tuning, evaluation.
//!
//! cargo run --release --example fewshot_pipeline -- [config.json] [out_dir]

use std::path::PathBuf;

use datml::cli::{eval_stage, finetune_stage, gen_corpus, pretrain, train, RunConfig, Workspace};

fn main() -> datml::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/toy.json"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("datml-fewshot"));
    let cfg = RunConfig::load(&config)?;
    let ws = Workspace::new(&out).with_config_dir(config.parent().unwrap_or(std::path::Path::new("")));

    let corpus = gen_corpus(&cfg, &ws)?;
    println!("corpus: {} dialogues", corpus.len());
    let laed = pretrain(&cfg, &ws)?;
    println!("laed: y={} k={}", laed.y(), laed.k());
    let (_, h) = train(&cfg, &ws)?;
    println!("{}: {} episodes, last loss {:.3}", cfg.meta.method.name(), h.records.len(), h.losses().last().unwrap_or(&f64::NAN));
    let (_, h) = finetune_stage(&cfg, &ws)?;
    println!("fine-tune: {} epochs, best {:?}", h.records.len(), h.best_epoch());
    print!("\n{}", eval_stage(&cfg, &ws)?.to_table());
    println!("artifacts in {}", out.display());
    Ok(())
}
