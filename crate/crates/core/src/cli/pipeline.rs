//! The five pipeline stages and the files they exchange under an output
//! directory:
//!
//! ```text
//! corpus.jsonl, kb.json          gen-corpus
//! vocab.json                     pretrain
//! checkpoints/{divae,divst,sys_pred}.{json,bin}
//! checkpoints/hred-source.*      train
//! checkpoints/hred-finetuned-<fraction>.*
//! logs/<stage>.json              every stage
//! eval_report.{json,txt}         eval
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::Serialize;

use super::checkpoint::{load_checkpoint, manifest_path, save_checkpoint, write_atomic};
use super::config::RunConfig;
use crate::corpus::{
    build_vocab, generate_corpus, read_corpus, read_kb, sample_fewshot, split_for_target, write_corpus, write_kb, Corpus,
    CorpusSpec, Dialogue, KnowledgeBase, Speaker, TargetSplit, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport, ResponseGenerator, TurnQuery};
use crate::hred::{HredExample, HredInput, HredModel};
use crate::laed::{non_empty, pretrain_laed, LaedArtifacts, LaedKind, LaedModel, LatentCode, SysLatentPredictor};
use crate::meta::{finetune, source_train, TrainHistory};

pub const PRE_FINETUNE_LABEL: &str = "source";
pub const FINETUNED_LABEL: &str = "fine-tuned";

/// Output directory plus the directory relative data paths resolve against.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub out: PathBuf,
    pub config_dir: PathBuf,
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            config_dir: PathBuf::new(),
        }
    }

    pub fn with_config_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.config_dir = dir.into();
        self
    }

    fn data_path(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        match configured {
            Some(p) if p.is_relative() => self.config_dir.join(p),
            Some(p) => p.clone(),
            None => self.out.join(default),
        }
    }

    pub fn corpus_path(&self, cfg: &RunConfig) -> PathBuf {
        self.data_path(&cfg.data.corpus, "corpus.jsonl")
    }

    pub fn kb_path(&self, cfg: &RunConfig) -> PathBuf {
        self.data_path(&cfg.data.kb, "kb.json")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.out.join("vocab.json")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.out.join("checkpoints").join(name)
    }

    pub fn finetuned_checkpoint(&self, fraction: f64) -> PathBuf {
        self.checkpoint(&format!("hred-finetuned-{fraction}"))
    }

    pub fn log_path(&self, stage: &str) -> PathBuf {
        self.out.join("logs").join(format!("{stage}.json"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.out.join("eval_report.json")
    }

    pub fn report_table(&self) -> PathBuf {
        self.out.join("eval_report.txt")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStage {
            stage,
            path: path.display().to_string(),
        })
    }
}

fn require_checkpoint(stem: &Path, stage: &'static str) -> Result<()> {
    require(&manifest_path(stem), stage)
}

#[derive(Serialize)]
struct RunLog<'a, T: Serialize> {
    stage: &'a str,
    fingerprint: String,
    seed: u64,
    config: serde_json::Value,
    #[serde(flatten)]
    details: T,
}

fn write_log<T: Serialize>(ws: &Workspace, stage: &str, cfg: &RunConfig, details: T) -> Result<()> {
    let log = RunLog {
        stage,
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        config: cfg.to_value(),
        details,
    };
    let text = serde_json::to_string_pretty(&log).expect("run log serialises") + "\n";
    write_file(&ws.log_path(stage), &text)
}

fn save(params: &crate::compute::ParamSet, kind: &str, cfg: &RunConfig, stem: &Path) -> Result<()> {
    save_checkpoint(params, kind, &cfg.to_value(), &cfg.fingerprint(), stem)?;
    Ok(())
}

/// Writes the synthetic corpus and knowledge base.
pub fn gen_corpus(cfg: &RunConfig, ws: &Workspace) -> Result<Corpus> {
    let spec = CorpusSpec::toy(cfg.data.generate.dialogues_per_domain, cfg.data.generate.seed);
    let (corpus, kb) = generate_corpus(&spec)?;
    let (cpath, kpath) = (ws.corpus_path(cfg), ws.kb_path(cfg));
    for p in [&cpath, &kpath] {
        if let Some(dir) = p.parent() {
            ensure_dir(dir)?;
        }
    }
    write_corpus(&cpath, &corpus)?;
    write_kb(&kpath, &kb)?;
    #[derive(Serialize)]
    struct Details {
        corpus: String,
        kb: String,
        dialogues: usize,
        domains: Vec<String>,
    }
    write_log(
        ws,
        "gen-corpus",
        cfg,
        Details {
            corpus: cpath.display().to_string(),
            kb: kpath.display().to_string(),
            dialogues: corpus.len(),
            domains: corpus.domains(),
        },
    )?;
    Ok(corpus)
}

/// Corpus, knowledge base, target split and few-shot draw for a config.
pub struct Data {
    pub corpus: Corpus,
    pub kb: KnowledgeBase,
    pub split: TargetSplit,
    pub few_shot: Vec<Dialogue>,
}

pub fn load_data(cfg: &RunConfig, ws: &Workspace) -> Result<Data> {
    let (cpath, kpath) = (ws.corpus_path(cfg), ws.kb_path(cfg));
    require(&cpath, "gen-corpus")?;
    require(&kpath, "gen-corpus")?;
    let corpus = read_corpus(&cpath)?;
    let kb = read_kb(&kpath)?;
    let split = split_for_target(&corpus, &cfg.data.target_domain, cfg.data.split, cfg.data.split_seed)?;
    let few_shot = sample_fewshot(&split.train_pool, cfg.finetune.fraction, cfg.finetune.seed)?;
    Ok(Data {
        corpus,
        kb,
        split,
        few_shot,
    })
}

pub fn load_vocab(ws: &Workspace) -> Result<Vocab> {
    let path = ws.vocab_path();
    require(&path, "pretrain")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: Vocab = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(v.reindex())
}

pub fn load_laed(cfg: &RunConfig, ws: &Workspace, vocab: &Vocab) -> Result<LaedArtifacts> {
    let v = vocab.len();
    let load = |name: &str| -> Result<crate::compute::ParamSet> {
        let stem = ws.checkpoint(name);
        require_checkpoint(&stem, "pretrain")?;
        let (p, _) = load_checkpoint(&stem, name)?;
        Ok(p)
    };
    Ok(LaedArtifacts {
        divae: LaedModel::from_params(LaedKind::Divae, cfg.laed_config(v), load("divae")?)?,
        divst: LaedModel::from_params(LaedKind::Divst, cfg.laed_config(v), load("divst")?)?,
        predictor: SysLatentPredictor::from_params(cfg.predictor_config(v), load("sys_pred")?)?,
    })
}

fn load_hred(cfg: &RunConfig, vocab: &Vocab, stem: &Path, kind: &str, stage: &'static str) -> Result<HredModel> {
    require_checkpoint(stem, stage)?;
    let (params, _) = load_checkpoint(stem, kind)?;
    HredModel::from_params(cfg.hred_config(vocab.len()), params)
}

/// `(z_usr, z_sys)`: the DI-VAE code of the user turn and the predicted
/// DI-VST code of the response.
pub fn turn_latents(
    laed: &LaedArtifacts,
    vocab: &Vocab,
    context: &[Vec<String>],
    user: &[String],
) -> Result<(LatentCode, LatentCode)> {
    let user_ids = vocab.encode(user);
    let context_ids: Vec<Vec<usize>> = context.iter().map(|t| vocab.encode(t)).collect();
    let z_usr = laed.divae.recognize(non_empty(&user_ids))?;
    let z_sys = laed.predictor.greedy(&context_ids, &user_ids)?;
    Ok((z_usr, z_sys))
}

/// One example per system turn, keyed by that turn's domain.
pub fn build_examples(
    dialogues: &[Dialogue],
    vocab: &Vocab,
    laed: Option<&LaedArtifacts>,
    max_context: usize,
) -> Result<Vec<(String, HredExample)>> {
    let mut out = Vec::new();
    for d in dialogues {
        let tokens: Vec<Vec<String>> = d.turns.iter().map(|t| t.tokens()).collect();
        for (i, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::Sys || i == 0 {
                continue;
            }
            let (context, user) = (&tokens[..i - 1], &tokens[i - 1]);
            let input = HredInput::new(vocab, context, user, max_context);
            let target = input.target_ids(vocab, &tokens[i]);
            let latents = laed.map(|l| turn_latents(l, vocab, context, user)).transpose()?;
            out.push((turn.domain.clone(), HredExample { input, target, latents }));
        }
    }
    Ok(out)
}

fn only_domain(examples: Vec<(String, HredExample)>, domain: &str) -> Vec<HredExample> {
    examples.into_iter().filter(|(d, _)| d == domain).map(|(_, e)| e).collect()
}

/// Greedy HRED responses, conditioned on latents when the model uses them.
pub struct HredResponder<'a> {
    pub model: &'a HredModel,
    pub vocab: &'a Vocab,
    pub laed: Option<&'a LaedArtifacts>,
    pub max_len: usize,
}

impl ResponseGenerator for HredResponder<'_> {
    fn respond(&self, q: &TurnQuery<'_>) -> Result<Vec<String>> {
        let input = HredInput::new(self.vocab, &q.context, &q.user, self.model.config.max_context);
        let latents = match (self.model.config.latents_enabled(), self.laed) {
            (true, Some(l)) => Some(turn_latents(l, self.vocab, &q.context, &q.user)?),
            (true, None) => return Err(Error::LatentMismatch("model expects latents but none were supplied".into())),
            (false, _) => None,
        };
        let ids = self.model.generate(&input, latents.as_ref(), self.max_len)?;
        Ok(input.decode(self.vocab, &ids))
    }
}

/// Builds the vocabulary and trains DI-VAE, DI-VST and the latent predictor.
pub fn pretrain(cfg: &RunConfig, ws: &Workspace) -> Result<LaedArtifacts> {
    let data = load_data(cfg, ws)?;
    let seen: Vec<Dialogue> = data.split.source.iter().chain(&data.few_shot).cloned().collect();
    let vocab = build_vocab(&seen);
    write_file(&ws.vocab_path(), &(serde_json::to_string(&vocab).expect("vocab serialises") + "\n"))?;
    let (laed, log) = pretrain_laed(&seen, &vocab, &cfg.pretrain_config(), cfg.seed)?;
    save(&laed.divae.params, "divae", cfg, &ws.checkpoint("divae"))?;
    save(&laed.divst.params, "divst", cfg, &ws.checkpoint("divst"))?;
    save(&laed.predictor.params, "sys_pred", cfg, &ws.checkpoint("sys_pred"))?;
    #[derive(Serialize)]
    struct Details<'a> {
        vocab_size: usize,
        dialogues: usize,
        history: &'a crate::laed::PretrainLog,
    }
    write_log(
        ws,
        "pretrain",
        cfg,
        Details {
            vocab_size: vocab.len(),
            dialogues: seen.len(),
            history: &log,
        },
    )?;
    Ok(laed)
}

fn hred_loss_fn(
    model: &HredModel,
) -> impl Fn(&crate::compute::ParamSet, &[HredExample], u64) -> Result<(crate::compute::Graph, crate::compute::Var)> + '_ {
    move |p, batch, seed| model.loss_graph(p, batch, Some(seed))
}

/// Source training over the non-target domains.
pub fn train(cfg: &RunConfig, ws: &Workspace) -> Result<(HredModel, TrainHistory)> {
    let vocab = load_vocab(ws)?;
    let laed = load_laed(cfg, ws, &vocab)?;
    let data = load_data(cfg, ws)?;
    let model = HredModel::new(cfg.hred_config(vocab.len()), cfg.seed)?;
    let latents = model.config.latents_enabled().then_some(&laed);
    let mut pools: IndexMap<String, Vec<HredExample>> = IndexMap::new();
    for (domain, ex) in build_examples(&data.split.source, &vocab, latents, cfg.model.max_context)? {
        pools.entry(domain).or_default().push(ex);
    }
    pools.sort_keys();
    let (params, history) = source_train(&model.params, &pools, &cfg.meta_config(), &hred_loss_fn(&model))?;
    save(&params, "hred-source", cfg, &ws.checkpoint("hred-source"))?;
    #[derive(Serialize)]
    struct Details<'a> {
        method: &'a str,
        examples_per_domain: IndexMap<&'a str, usize>,
        history: &'a TrainHistory,
    }
    write_log(
        ws,
        "train",
        cfg,
        Details {
            method: cfg.meta.method.name(),
            examples_per_domain: pools.iter().map(|(k, v)| (k.as_str(), v.len())).collect(),
            history: &history,
        },
    )?;
    Ok((HredModel { params, ..model }, history))
}

/// Fine-tunes the source model on the few-shot target dialogues.
pub fn finetune_stage(cfg: &RunConfig, ws: &Workspace) -> Result<(HredModel, TrainHistory)> {
    require_checkpoint(&ws.checkpoint("hred-source"), "train")?;
    let vocab = load_vocab(ws)?;
    let source = load_hred(cfg, &vocab, &ws.checkpoint("hred-source"), "hred-source", "train")?;
    let laed = load_laed(cfg, ws, &vocab)?;
    let data = load_data(cfg, ws)?;
    let target = cfg.data.target_domain.as_str();
    let latents = source.config.latents_enabled().then_some(&laed);
    let few = only_domain(build_examples(&data.few_shot, &vocab, latents, cfg.model.max_context)?, target);
    let val = only_domain(build_examples(&data.split.validation, &vocab, latents, cfg.model.max_context)?, target);
    let accuracy = |p: &crate::compute::ParamSet, exs: &[HredExample]| -> Result<f64> {
        let m = HredModel {
            config: source.config.clone(),
            params: p.clone(),
        };
        let (hits, total) = m.token_accuracy(exs)?;
        Ok(hits as f64 / total.max(1) as f64)
    };
    let (params, history) = finetune(
        &source.params,
        &few,
        &val,
        &cfg.finetune_config(),
        &hred_loss_fn(&source),
        &accuracy,
    )?;
    save(&params, "hred-finetuned", cfg, &ws.finetuned_checkpoint(cfg.finetune.fraction))?;
    #[derive(Serialize)]
    struct Details<'a> {
        fraction: f64,
        few_shot_dialogues: usize,
        few_shot_examples: usize,
        validation_examples: usize,
        best_epoch: Option<usize>,
        history: &'a TrainHistory,
    }
    write_log(
        ws,
        &format!("finetune-{}", cfg.finetune.fraction),
        cfg,
        Details {
            fraction: cfg.finetune.fraction,
            few_shot_dialogues: data.few_shot.len(),
            few_shot_examples: few.len(),
            validation_examples: val.len(),
            best_epoch: history.best_epoch(),
            history: &history,
        },
    )?;
    Ok((HredModel { params, ..source }, history))
}

/// Scores the source-trained and fine-tuned models on the target test set.
pub fn eval_stage(cfg: &RunConfig, ws: &Workspace) -> Result<EvalReport> {
    require_checkpoint(&ws.finetuned_checkpoint(cfg.finetune.fraction), "finetune")?;
    let vocab = load_vocab(ws)?;
    let source = load_hred(cfg, &vocab, &ws.checkpoint("hred-source"), "hred-source", "train")?;
    let tuned = load_hred(
        cfg,
        &vocab,
        &ws.finetuned_checkpoint(cfg.finetune.fraction),
        "hred-finetuned",
        "finetune",
    )?;
    let laed = load_laed(cfg, ws, &vocab)?;
    let data = load_data(cfg, ws)?;
    let target = cfg.data.target_domain.as_str();
    let mut report = EvalReport::new(cfg.fingerprint(), Some(cfg.finetune.fraction));
    for (label, model) in [(PRE_FINETUNE_LABEL, &source), (FINETUNED_LABEL, &tuned)] {
        let responder = HredResponder {
            model,
            vocab: &vocab,
            laed: Some(&laed),
            max_len: cfg.eval.max_len,
        };
        report
            .rows
            .push(evaluate_model(&responder, &data.split.test, &data.kb, target, label)?);
    }
    write_file(&ws.report_json(), &report.to_json())?;
    write_file(&ws.report_table(), &report.to_table())?;
    write_log(ws, "eval", cfg, &report)?;
    Ok(report)
}

/// gen-corpus (when the corpus is absent), pretrain, train, finetune, eval.
pub fn run_all(cfg: &RunConfig, ws: &Workspace) -> Result<EvalReport> {
    if !ws.corpus_path(cfg).exists() || !ws.kb_path(cfg).exists() {
        gen_corpus(cfg, ws)?;
    }
    pretrain(cfg, ws)?;
    train(cfg, ws)?;
    finetune_stage(cfg, ws)?;
    eval_stage(cfg, ws)
}

