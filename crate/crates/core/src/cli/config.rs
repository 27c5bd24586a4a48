use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compute::OptimizerKind;
use crate::corpus::SplitFractions;
use crate::error::{Error, Result};
use crate::hred::{HredConfig, LatentShape};
use crate::laed::{LaedConfig, PredictorConfig, PretrainConfig};
use crate::meta::{FinetuneConfig, MetaConfig, MetaMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub laed_y: usize,
    pub laed_k: usize,
    pub max_context: usize,
    /// Condition the response decoder on `(z_usr, z_sys)`.
    pub latents: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            dropout: 0.3,
            laed_y: 10,
            laed_k: 5,
            max_context: 4,
            latents: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub predictor_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub temperature: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            epochs: 3,
            predictor_epochs: 3,
            lr: 1e-3,
            batch: 16,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    pub method: MetaMethod,
    pub episodes: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_k: usize,
    pub batch: usize,
    pub inner_optimizer: OptimizerKind,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            method: MetaMethod::Reptile,
            episodes: 4000,
            inner_lr: 1e-3,
            outer_lr: 0.1,
            inner_k: 5,
            batch: 8,
            inner_optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub fraction: f64,
    pub max_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Seeds the few-shot draw from the target pool.
    pub seed: u64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            max_epochs: 50,
            lr: 1e-3,
            batch: 8,
            seed: 271,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub dialogues_per_domain: usize,
    pub seed: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            dialogues_per_domain: 150,
            seed: 271,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// JSON Lines corpus; `<out>/corpus.jsonl` when absent.
    pub corpus: Option<PathBuf>,
    /// Knowledge base; `<out>/kb.json` when absent.
    pub kb: Option<PathBuf>,
    pub target_domain: String,
    pub split: SplitFractions,
    pub split_seed: u64,
    /// Parameters for `gen-corpus`.
    pub generate: GenerateSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            corpus: None,
            kb: None,
            target_domain: "restaurant".into(),
            split: SplitFractions::default(),
            split_seed: 271,
            generate: GenerateSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_len: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { max_len: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub meta: MetaSection,
    pub finetune: FinetuneSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 271,
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            meta: MetaSection::default(),
            finetune: FinetuneSection::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.embed_dim == 0 || m.hidden_dim == 0 || m.laed_y == 0 || m.laed_k < 2 {
            return Err(Error::Config("model dimensions must be positive and laed_k at least 2".into()));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", m.dropout)));
        }
        let f = self.finetune.fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("few-shot fraction {f} outside (0, 1]")));
        }
        if self.pretrain.batch == 0 || self.finetune.batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        self.meta_config().validate()
    }

    /// SHA-256 over the canonical (key-sorted, compact) JSON rendering.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            y: self.model.laed_y,
            k: self.model.laed_k,
            temperature: self.pretrain.temperature,
            epochs: self.pretrain.epochs,
            predictor_epochs: self.pretrain.predictor_epochs,
            learning_rate: self.pretrain.lr,
            batch_size: self.pretrain.batch,
            max_context: self.model.max_context,
        }
    }

    pub fn laed_config(&self, vocab_size: usize) -> LaedConfig {
        LaedConfig {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            y: self.model.laed_y,
            k: self.model.laed_k,
            temperature: self.pretrain.temperature,
        }
    }

    pub fn predictor_config(&self, vocab_size: usize) -> PredictorConfig {
        PredictorConfig {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            y: self.model.laed_y,
            k: self.model.laed_k,
            max_context: self.model.max_context,
        }
    }

    pub fn hred_config(&self, vocab_size: usize) -> HredConfig {
        HredConfig {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            dropout: self.model.dropout,
            latent: self.model.latents.then_some(LatentShape {
                y: self.model.laed_y,
                k: self.model.laed_k,
            }),
            max_context: self.model.max_context,
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            method: self.meta.method,
            inner_lr: self.meta.inner_lr,
            outer_lr: self.meta.outer_lr,
            inner_steps: self.meta.inner_k,
            episodes: self.meta.episodes,
            inner_optimizer: self.meta.inner_optimizer,
            batch_size: self.meta.batch,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            max_epochs: self.finetune.max_epochs,
            lr: self.finetune.lr,
            batch_size: self.finetune.batch,
            seed: self.seed,
        }
    }
}
