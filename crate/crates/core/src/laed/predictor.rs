use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{non_empty, LatentCode, LatentPosterior};
use crate::compute::{ComputeError, Graph, ParamSet, Var};
use crate::error::{Error, Result};
use crate::nn::{init_embedding, init_gru, init_linear, linear, Gru};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub y: usize,
    pub k: usize,
    /// Only the last `max_context` context turns are encoded.
    pub max_context: usize,
}

/// Predicts the system-response code from the context and the user turn.
#[derive(Clone, Debug, PartialEq)]
pub struct SysLatentPredictor {
    pub config: PredictorConfig,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSample {
    pub context: Vec<Vec<usize>>,
    pub user: Vec<usize>,
    pub target: LatentCode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Distribution,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SysLatent {
    Distribution(LatentPosterior),
    Code(LatentCode),
}

impl SysLatentPredictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let (e, h) = (config.embed_dim, config.hidden_dim);
        init_embedding(&mut p, "emb", config.vocab_size, e, &mut rng)?;
        init_gru(&mut p, "utt.gru", e, h, &mut rng)?;
        init_gru(&mut p, "ctx.gru", h, h, &mut rng)?;
        init_linear(&mut p, "out", h, config.y * config.k, &mut rng)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: PredictorConfig, params: ParamSet) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        template.params.check_compatible(&params)?;
        Ok(Self { config, params })
    }

    /// Logits `[y, k]`.
    fn logits(&self, g: &mut Graph, params: &ParamSet, context: &[Vec<usize>], user: &[usize]) -> Result<Var, ComputeError> {
        let emb = g.param(params, "emb")?;
        let utt = Gru::bind(g, params, "utt.gru")?;
        let ctx = Gru::bind(g, params, "ctx.gru")?;
        let h = self.config.hidden_dim;
        let skip = context.len().saturating_sub(self.config.max_context);
        let mut vectors = Vec::new();
        for turn in context[skip..].iter().map(Vec::as_slice).chain(std::iter::once(user)) {
            let x = g.gather(emb, non_empty(turn));
            let h0 = g.zeros(1, h);
            let states = utt.run(g, x, h0);
            vectors.push(*states.last().expect("non-empty turn"));
        }
        let seq = g.concat_rows(&vectors);
        let h0 = g.zeros(1, h);
        let states = ctx.run(g, seq, h0);
        let last = *states.last().expect("user turn present");
        let out = linear(g, params, "out", last)?;
        Ok(g.reshape(out, self.config.y, self.config.k))
    }

    pub fn distribution(&self, context: &[Vec<usize>], user: &[usize]) -> Result<LatentPosterior> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, &self.params, context, user)?;
        Ok(LatentPosterior::from_logits(g.value(logits), self.config.k))
    }

    pub fn greedy(&self, context: &[Vec<usize>], user: &[usize]) -> Result<LatentCode> {
        Ok(self.distribution(context, user)?.argmax())
    }

    /// Mean cross-entropy over samples and latent variables; returns the graph and loss.
    pub fn loss_graph(&self, params: &ParamSet, batch: &[PredictorSample]) -> Result<(Graph, Var)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("predictor_loss"));
        }
        let mut g = Graph::new();
        let mut terms = Vec::with_capacity(batch.len());
        for s in batch {
            if s.target.y() != self.config.y || s.target.k() != self.config.k {
                return Err(Error::LatentMismatch(format!(
                    "target is {}x{}, predictor is {}x{}",
                    s.target.y(),
                    s.target.k(),
                    self.config.y,
                    self.config.k
                )));
            }
            let logits = self.logits(&mut g, params, &s.context, &s.user)?;
            let logp = g.log_softmax(logits);
            let coords: Vec<(usize, usize)> = s.target.values().iter().copied().enumerate().collect();
            let picked = g.pick(logp, &coords);
            terms.push(g.sum(picked));
        }
        let total = g.add_all(&terms);
        let loss = g.scale(total, -1.0 / (batch.len() * self.config.y) as f64);
        Ok((g, loss))
    }
}

pub fn predict_sys_latent(
    pred: &SysLatentPredictor,
    context: &[Vec<usize>],
    user: &[usize],
    mode: PredictMode,
) -> Result<SysLatent> {
    Ok(match mode {
        PredictMode::Distribution => SysLatent::Distribution(pred.distribution(context, user)?),
        PredictMode::Greedy => SysLatent::Code(pred.greedy(context, user)?),
    })
}
