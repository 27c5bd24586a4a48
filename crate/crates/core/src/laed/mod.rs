//! Discrete latent action models.
//!
//! A recognition network maps an utterance to `y` categorical variables
//! over `k` values. DI-VAE reconstructs the utterance from the code; DI-VST
//! predicts the previous and next utterances from it. The KL term compares
//! the batch-mean posterior with a uniform prior.

mod predictor;
mod pretrain;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{argmax, sample_gumbel, softmax_in_place, ComputeError, Graph, ParamSet, Var};
use crate::corpus::PAD_ID;
use crate::error::{Error, Result};
use crate::nn::{init_embedding, init_gru, init_linear, linear, Gru};

pub use predictor::{predict_sys_latent, PredictMode, PredictorConfig, PredictorSample, SysLatent, SysLatentPredictor};
pub use pretrain::{pretrain_laed, LaedArtifacts, PretrainConfig, PretrainLog};

/// Hard latent code: `y` values, each in `[0, k)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentCode {
    values: Vec<usize>,
    k: usize,
}

impl LatentCode {
    pub fn new(values: Vec<usize>, k: usize) -> Result<Self> {
        if values.is_empty() || k == 0 || values.iter().any(|&v| v >= k) {
            return Err(Error::LatentMismatch(format!("code {values:?} invalid for k={k}")));
        }
        Ok(Self { values, k })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn y(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Concatenated one-hot vectors, length `y * k`.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len() * self.k];
        for (i, &v) in self.values.iter().enumerate() {
            out[i * self.k + v] = 1.0;
        }
        out
    }
}

/// `y` probability vectors over `k` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    dists: Vec<Vec<f64>>,
}

impl LatentPosterior {
    /// Row-wise softmax of `y * k` logits.
    pub fn from_logits(logits: &[f64], k: usize) -> Self {
        let dists = logits
            .chunks(k)
            .map(|row| {
                let mut r = row.to_vec();
                softmax_in_place(&mut r);
                r
            })
            .collect();
        Self { dists }
    }

    pub fn dists(&self) -> &[Vec<f64>] {
        &self.dists
    }

    /// Per-variable argmax, ties to the lowest index.
    pub fn argmax(&self) -> LatentCode {
        let k = self.dists.first().map_or(1, Vec::len);
        LatentCode {
            values: self.dists.iter().map(|d| argmax(d)).collect(),
            k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaedKind {
    Divae,
    Divst,
}

impl LaedKind {
    pub fn name(self) -> &'static str {
        match self {
            LaedKind::Divae => "divae",
            LaedKind::Divst => "divst",
        }
    }

    /// Parameter-name prefixes of the generation network.
    pub fn generator_groups(self) -> &'static [&'static str] {
        match self {
            LaedKind::Divae => &["dec"],
            LaedKind::Divst => &["dec_prev", "dec_next"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaedConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub y: usize,
    pub k: usize,
    pub temperature: f64,
}

impl LaedConfig {
    pub fn code_width(&self) -> usize {
        self.y * self.k
    }
}

/// How the reconstruction expectation over `q(z|x)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSampling {
    /// Gumbel-softmax sample, hard one-hot forward, relaxed gradient.
    StraightThrough,
    /// Gumbel-softmax sample used as is.
    Relaxed,
    /// Exact sum over all `k^y` assignments weighted by `q`.
    Marginal,
}

/// Largest `k^y` accepted by [`LatentSampling::Marginal`].
pub const MAX_MARGINAL_ASSIGNMENTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentOptions {
    pub sampling: LatentSampling,
    pub noise_seed: u64,
}

impl LatentOptions {
    pub fn training(noise_seed: u64) -> Self {
        Self {
            sampling: LatentSampling::StraightThrough,
            noise_seed,
        }
    }

    pub fn marginal() -> Self {
        Self {
            sampling: LatentSampling::Marginal,
            noise_seed: 0,
        }
    }
}

/// Which DI-VST likelihood terms enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VstTerms {
    pub prev: bool,
    pub next: bool,
}

impl Default for VstTerms {
    fn default() -> Self {
        Self { prev: true, next: true }
    }
}

/// Consecutive utterances; a missing neighbour is `[PAD_ID]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub prev: Vec<usize>,
    pub current: Vec<usize>,
    pub next: Vec<usize>,
}

/// A built loss with its two components exposed.
pub struct LossGraph {
    pub graph: Graph,
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.graph.scalar(self.loss)
    }

    pub fn reconstruction(&self) -> f64 {
        self.graph.scalar(self.reconstruction)
    }

    pub fn kl(&self) -> f64 {
        self.graph.scalar(self.kl)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaedModel {
    pub kind: LaedKind,
    pub config: LaedConfig,
    pub params: ParamSet,
}

pub(crate) fn non_empty(ids: &[usize]) -> &[usize] {
    if ids.is_empty() {
        &[PAD_ID]
    } else {
        ids
    }
}

impl LaedModel {
    pub fn new(kind: LaedKind, config: LaedConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        init_embedding(&mut p, "emb", v, e, &mut rng)?;
        init_gru(&mut p, "rec.gru", e, h, &mut rng)?;
        init_linear(&mut p, "rec.out", h, config.code_width(), &mut rng)?;
        for prefix in kind.generator_groups() {
            p.insert(
                format!("{prefix}.start"),
                crate::compute::Tensor::uniform(&[e], 0.1, &mut rng).trainable(),
            )?;
            init_linear(&mut p, &format!("{prefix}.init"), config.code_width(), h, &mut rng)?;
            init_gru(&mut p, &format!("{prefix}.gru"), e, h, &mut rng)?;
            init_linear(&mut p, &format!("{prefix}.out"), h, v, &mut rng)?;
        }
        Ok(Self {
            kind,
            config,
            params: p,
        })
    }

    /// Wraps loaded parameters after checking them against a fresh layout.
    pub fn from_params(kind: LaedKind, config: LaedConfig, params: ParamSet) -> Result<Self> {
        let template = Self::new(kind, config.clone(), 0)?;
        template.params.check_compatible(&params)?;
        Ok(Self { kind, config, params })
    }

    /// Number of generator parameter groups (1 for DI-VAE, 2 for DI-VST).
    pub fn generator_group_count(&self) -> usize {
        let groups = self.kind.generator_groups();
        groups
            .iter()
            .filter(|g| self.params.names().any(|n| n.starts_with(&format!("{g}."))))
            .count()
    }

    /// Posterior logits reshaped to `[y, k]`.
    fn posterior_logits(&self, g: &mut Graph, params: &ParamSet, ids: &[usize]) -> Result<Var, ComputeError> {
        let ids = non_empty(ids);
        let emb = g.param(params, "emb")?;
        let x = g.gather(emb, ids);
        let gru = Gru::bind(g, params, "rec.gru")?;
        let h0 = g.zeros(1, self.config.hidden_dim);
        let states = gru.run(g, x, h0);
        let last = *states.last().expect("non-empty input");
        let logits = linear(g, params, "rec.out", last)?;
        Ok(g.reshape(logits, self.config.y, self.config.k))
    }

    /// Summed token NLL of `targets` under generator `prefix` given code row `z [1, y*k]`.
    fn decoder_nll(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        prefix: &str,
        z: Var,
        targets: &[usize],
    ) -> Result<Var, ComputeError> {
        let logp = self.decoder_log_probs(g, params, prefix, z, targets)?;
        let coords: Vec<(usize, usize)> = targets.iter().enumerate().map(|(t, &id)| (t, id)).collect();
        let picked = g.pick(logp, &coords);
        let total = g.sum(picked);
        Ok(g.neg(total))
    }

    /// Teacher-forced log-probabilities `[T, V]` for predicting `targets`.
    fn decoder_log_probs(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        prefix: &str,
        z: Var,
        targets: &[usize],
    ) -> Result<Var, ComputeError> {
        let init = linear(g, params, &format!("{prefix}.init"), z)?;
        let h0 = g.tanh(init);
        let start = g.param(params, &format!("{prefix}.start"))?;
        let mut inputs = vec![start];
        if targets.len() > 1 {
            let emb = g.param(params, "emb")?;
            inputs.push(g.gather(emb, &targets[..targets.len() - 1]));
        }
        let x = g.concat_rows(&inputs);
        let gru = Gru::bind(g, params, &format!("{prefix}.gru"))?;
        let states = gru.run(g, x, h0);
        let stacked = g.concat_rows(&states);
        let logits = linear(g, params, &format!("{prefix}.out"), stacked)?;
        Ok(g.log_softmax(logits))
    }

    /// `sum qbar ln(qbar * k)` for the batch-mean posterior `qbar`.
    fn batch_kl(&self, g: &mut Graph, posteriors: &[Var]) -> Var {
        let mut total = posteriors[0];
        for q in &posteriors[1..] {
            total = g.add(total, *q);
        }
        let qbar = g.scale(total, 1.0 / posteriors.len() as f64);
        let ratio = g.scale(qbar, self.config.k as f64);
        let log_ratio = g.log(ratio);
        let terms = g.mul(qbar, log_ratio);
        g.sum(terms)
    }

    fn sampled_code(&self, g: &mut Graph, logits: Var, sampling: LatentSampling, rng: &mut ChaCha8Rng) -> Var {
        let noise = sample_gumbel(self.config.code_width(), rng);
        let soft = g.gumbel_softmax(logits, &noise, self.config.temperature);
        let code = match sampling {
            LatentSampling::StraightThrough => g.straight_through(soft),
            _ => soft,
        };
        g.reshape(code, 1, self.config.code_width())
    }

    fn assignments(&self) -> Result<Vec<Vec<usize>>> {
        let (y, k) = (self.config.y, self.config.k);
        let count = (k as f64).powi(y as i32);
        if count > MAX_MARGINAL_ASSIGNMENTS as f64 {
            return Err(Error::Config(format!(
                "marginal latent expectation needs k^y <= {MAX_MARGINAL_ASSIGNMENTS}, got {k}^{y}"
            )));
        }
        let mut out = vec![vec![]];
        for _ in 0..y {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..k).map(move |v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }

    /// Weight `prod_i q[i, a_i]` of assignment `a` under posterior `q [y, k]`.
    fn assignment_weight(g: &mut Graph, q: Var, assignment: &[usize]) -> Var {
        let coords: Vec<(usize, usize)> = assignment.iter().enumerate().map(|(i, &v)| (i, v)).collect();
        let picked = g.pick(q, &coords);
        if assignment.len() == 1 {
            return picked;
        }
        let logs = g.log(picked);
        let s = g.sum(logs);
        g.exp(s)
    }

    /// For each item and each requested generator, the expected summed NLL.
    fn expected_nll(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        logits: Var,
        q: Var,
        generators: &[(&str, &[usize])],
        opts: &LatentOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Var>> {
        match opts.sampling {
            LatentSampling::Marginal => {
                let width = self.config.code_width();
                let mut acc: Vec<Vec<Var>> = vec![Vec::new(); generators.len()];
                for a in self.assignments()? {
                    let code = LatentCode {
                        values: a.clone(),
                        k: self.config.k,
                    };
                    let z = g.constant(1, width, code.one_hot());
                    let w = Self::assignment_weight(g, q, &a);
                    for (slot, (prefix, targets)) in acc.iter_mut().zip(generators) {
                        let nll = self.decoder_nll(g, params, prefix, z, targets)?;
                        slot.push(g.mul(w, nll));
                    }
                }
                Ok(acc.iter().map(|terms| g.add_all(terms)).collect())
            }
            sampling => {
                let z = self.sampled_code(g, logits, sampling, rng);
                generators
                    .iter()
                    .map(|(prefix, targets)| Ok(self.decoder_nll(g, params, prefix, z, targets)?))
                    .collect()
            }
        }
    }

    fn require(&self, kind: LaedKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongModelKind {
                expected: kind.name(),
                actual: self.kind.name().to_string(),
            });
        }
        Ok(())
    }

    /// DI-VAE objective: per-token reconstruction NLL plus KL(q(z) || uniform).
    pub fn divae_graph(&self, params: &ParamSet, batch: &[Vec<usize>], opts: &LatentOptions) -> Result<LossGraph> {
        self.require(LaedKind::Divae)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch("divae_loss"));
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
        let mut posteriors = Vec::with_capacity(batch.len());
        let mut nlls = Vec::with_capacity(batch.len());
        let mut tokens = 0usize;
        for x in batch {
            let x = non_empty(x);
            let logits = self.posterior_logits(&mut g, params, x)?;
            let q = g.softmax(logits);
            posteriors.push(q);
            let nll = self.expected_nll(&mut g, params, logits, q, &[("dec", x)], opts, &mut rng)?;
            nlls.extend(nll);
            tokens += x.len();
        }
        let total = g.add_all(&nlls);
        let reconstruction = g.scale(total, 1.0 / tokens as f64);
        let kl = self.batch_kl(&mut g, &posteriors);
        let loss = g.add(reconstruction, kl);
        Ok(LossGraph {
            graph: g,
            loss,
            reconstruction,
            kl,
        })
    }

    /// DI-VST objective: per-token NLL of the previous and next utterances
    /// (summed) plus KL(q(z) || uniform).
    pub fn divst_graph(
        &self,
        params: &ParamSet,
        batch: &[Triple],
        opts: &LatentOptions,
        terms: VstTerms,
    ) -> Result<LossGraph> {
        self.require(LaedKind::Divst)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch("divst_loss"));
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
        let mut posteriors = Vec::with_capacity(batch.len());
        let (mut prev_terms, mut next_terms) = (Vec::new(), Vec::new());
        let (mut prev_tokens, mut next_tokens) = (0usize, 0usize);
        for t in batch {
            let x = non_empty(&t.current);
            let prev = non_empty(&t.prev);
            let next = non_empty(&t.next);
            let logits = self.posterior_logits(&mut g, params, x)?;
            let q = g.softmax(logits);
            posteriors.push(q);
            let mut gens: Vec<(&str, &[usize])> = Vec::new();
            if terms.prev {
                gens.push(("dec_prev", prev));
            }
            if terms.next {
                gens.push(("dec_next", next));
            }
            let nll = self.expected_nll(&mut g, params, logits, q, &gens, opts, &mut rng)?;
            let mut it = nll.into_iter();
            if terms.prev {
                prev_terms.push(it.next().expect("prev term"));
                prev_tokens += prev.len();
            }
            if terms.next {
                next_terms.push(it.next().expect("next term"));
                next_tokens += next.len();
            }
        }
        let mut parts = Vec::new();
        if !prev_terms.is_empty() {
            let s = g.add_all(&prev_terms);
            parts.push(g.scale(s, 1.0 / prev_tokens as f64));
        }
        if !next_terms.is_empty() {
            let s = g.add_all(&next_terms);
            parts.push(g.scale(s, 1.0 / next_tokens as f64));
        }
        let reconstruction = if parts.is_empty() { g.zeros(1, 1) } else { g.add_all(&parts) };
        let kl = self.batch_kl(&mut g, &posteriors);
        let loss = g.add(reconstruction, kl);
        Ok(LossGraph {
            graph: g,
            loss,
            reconstruction,
            kl,
        })
    }

    pub fn posterior(&self, ids: &[usize]) -> Result<LatentPosterior> {
        let mut g = Graph::new();
        let logits = self.posterior_logits(&mut g, &self.params, ids)?;
        Ok(LatentPosterior::from_logits(g.value(logits), self.config.k))
    }

    /// Per-variable argmax of the recognition logits.
    pub fn recognize(&self, ids: &[usize]) -> Result<LatentCode> {
        let mut g = Graph::new();
        let logits = self.posterior_logits(&mut g, &self.params, ids)?;
        let values = g.value(logits).chunks(self.config.k).map(argmax).collect();
        Ok(LatentCode {
            values,
            k: self.config.k,
        })
    }

    /// Teacher-forced next-token accuracy of the first generator when fed
    /// the recognised code of each utterance.
    pub fn reconstruction_accuracy(&self, utterances: &[Vec<usize>]) -> Result<f64> {
        let prefix = self.kind.generator_groups()[0];
        let (mut hits, mut total) = (0usize, 0usize);
        for x in utterances {
            let x = non_empty(x);
            let code = self.recognize(x)?;
            let mut g = Graph::new();
            let z = g.constant(1, self.config.code_width(), code.one_hot());
            let logp = self.decoder_log_probs(&mut g, &self.params, prefix, z, x)?;
            let v = self.config.vocab_size;
            for (t, row) in g.value(logp).chunks(v).enumerate() {
                hits += usize::from(argmax(row) == x[t]);
                total += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }
}

/// DI-VAE loss value with straight-through sampling seeded by `noise_seed`.
pub fn divae_loss(model: &LaedModel, batch: &[Vec<usize>], noise_seed: u64) -> Result<f64> {
    Ok(model
        .divae_graph(&model.params, batch, &LatentOptions::training(noise_seed))?
        .value())
}

/// DI-VST loss value with straight-through sampling seeded by `noise_seed`.
pub fn divst_loss(model: &LaedModel, batch: &[Triple], noise_seed: u64) -> Result<f64> {
    Ok(model
        .divst_graph(&model.params, batch, &LatentOptions::training(noise_seed), VstTerms::default())?
        .value())
}

/// Per-variable argmax of the recognition network.
pub fn recognize(model: &LaedModel, utterance: &[usize]) -> Result<LatentCode> {
    model.recognize(utterance)
}
