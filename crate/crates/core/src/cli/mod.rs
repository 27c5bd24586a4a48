//! Command-line orchestration, run configuration and checkpoint files.

mod checkpoint;
mod config;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{
    load_checkpoint, manifest_path, payload_path, read_manifest, save_checkpoint, CheckpointError, Manifest, ParamRecord,
    FORMAT_VERSION,
};
pub use config::{
    DataSection, EvalSection, FinetuneSection, GenerateSection, MetaSection, ModelSection, PretrainSection, RunConfig,
};
pub use pipeline::{
    build_examples, eval_stage, finetune_stage, gen_corpus, load_data, load_laed, load_vocab, pretrain, run_all, train,
    turn_latents, Data, HredResponder, Workspace, FINETUNED_LABEL, PRE_FINETUNE_LABEL,
};

use crate::error::{Error, Result};
use crate::meta::MetaMethod;

#[derive(Debug, Parser)]
#[command(name = "datml", about = "Few-shot dialogue generation with latent transfer and meta-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus and knowledge base.
    GenCorpus(Common),
    /// Pre-train DI-VAE, DI-VST and the latent predictor.
    Pretrain(Common),
    /// Source-train the response generator on non-target domains.
    Train(Common),
    /// Fine-tune on the few-shot target dialogues.
    Finetune(Common),
    /// Score source and fine-tuned models on the target test set.
    Eval(Common),
    /// Every stage in order, then eval.
    RunAll(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "runs/default")]
    out: PathBuf,
    #[arg(long, value_name = "NAME")]
    target_domain: Option<String>,
    #[arg(long, value_name = "F")]
    fraction: Option<f64>,
    #[arg(long)]
    method: Option<MetaMethod>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self, config_required: bool) -> Result<(RunConfig, Workspace)> {
        let mut ws = Workspace::new(&self.out);
        let mut cfg = match &self.config {
            Some(path) => {
                ws = ws.with_config_dir(path.parent().map(PathBuf::from).unwrap_or_default());
                RunConfig::load(path)?
            }
            None if config_required => return Err(Error::Config("--config is required".into())),
            None => RunConfig::default(),
        };
        if let Some(d) = &self.target_domain {
            cfg.data.target_domain = d.clone();
        }
        if let Some(f) = self.fraction {
            cfg.finetune.fraction = f;
        }
        if let Some(m) = self.method {
            cfg.meta.method = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            if self.config.is_none() {
                cfg.data.generate.seed = s;
            }
        }
        cfg.validate()?;
        Ok((cfg, ws))
    }
}

/// Parses `argv` (program name first) and runs one subcommand.
/// Prints a summary to stdout; errors are returned for the caller to report.
pub fn run_command<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    match cli.command {
        Command::GenCorpus(c) => {
            let (cfg, ws) = c.resolve(false)?;
            let corpus = gen_corpus(&cfg, &ws)?;
            println!("wrote {} dialogues to {}", corpus.len(), ws.corpus_path(&cfg).display());
        }
        Command::Pretrain(c) => {
            let (cfg, ws) = c.resolve(true)?;
            pretrain(&cfg, &ws)?;
            println!("pretrain checkpoints written to {}", ws.checkpoint("").display());
        }
        Command::Train(c) => {
            let (cfg, ws) = c.resolve(true)?;
            let (_, h) = train(&cfg, &ws)?;
            let last = h.records.last().map_or(f64::NAN, |r| r.loss);
            println!("{} source training: {} episodes, final loss {last:.4}", cfg.meta.method.name(), h.records.len());
        }
        Command::Finetune(c) => {
            let (cfg, ws) = c.resolve(true)?;
            let (_, h) = finetune_stage(&cfg, &ws)?;
            println!(
                "fine-tuned for {} epochs, best epoch {}",
                h.records.len(),
                h.best_epoch().map_or("-".into(), |e| e.to_string())
            );
        }
        Command::Eval(c) => {
            let (cfg, ws) = c.resolve(true)?;
            print!("{}", eval_stage(&cfg, &ws)?.to_table());
        }
        Command::RunAll(c) => {
            let (cfg, ws) = c.resolve(true)?;
            print!("{}", run_all(&cfg, &ws)?.to_table());
        }
    }
    Ok(())
}
