//! Source-domain training (Reptile, first-order MAML, multitask) and
//! target-domain fine-tuning with early stopping.
//!
//! Everything here is generic over the example type `T` and a loss closure
//! `Fn(&ParamSet, &[T], noise_seed) -> (Graph, loss)`, so the same engine
//! drives the response generator and the small models used in tests.

use indexmap::IndexMap;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{ComputeError, Graph, OptimizerKind, OptimizerState, ParamSet, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMethod {
    Reptile,
    Fomaml,
    Multitask,
}

impl MetaMethod {
    pub fn name(self) -> &'static str {
        match self {
            MetaMethod::Reptile => "reptile",
            MetaMethod::Fomaml => "fomaml",
            MetaMethod::Multitask => "multitask",
        }
    }
}

impl std::str::FromStr for MetaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reptile" => Ok(MetaMethod::Reptile),
            "fomaml" => Ok(MetaMethod::Fomaml),
            "multitask" => Ok(MetaMethod::Multitask),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub method: MetaMethod,
    /// β
    pub inner_lr: f64,
    /// α
    pub outer_lr: f64,
    /// k
    pub inner_steps: usize,
    pub episodes: usize,
    pub inner_optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            method: MetaMethod::Reptile,
            inner_lr: 1e-3,
            outer_lr: 0.1,
            inner_steps: 5,
            episodes: 4000,
            inner_optimizer: OptimizerKind::Adam,
            batch_size: 8,
            seed: 271,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.outer_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.inner_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("inner_steps and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batches drawn from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub domain: String,
    pub batches: Vec<Vec<T>>,
}

impl<T: Clone> Episode<T> {
    /// `count` batches of up to `batch_size` items drawn without replacement;
    /// when the pool runs out, drawing restarts from a fresh permutation.
    pub fn sample<R: Rng + ?Sized>(domain: &str, pool: &[T], count: usize, batch_size: usize, rng: &mut R) -> Self {
        let per_pass = (pool.len() / batch_size.max(1)).max(1);
        let mut batches = Vec::with_capacity(count);
        while batches.len() < count {
            let need = (count - batches.len()).min(per_pass);
            let take = (need * batch_size).min(pool.len());
            let picked = index::sample(rng, pool.len(), take).into_vec();
            for chunk in picked.chunks(batch_size).take(need) {
                batches.push(chunk.iter().map(|&i| pool[i].clone()).collect());
            }
        }
        Self {
            domain: domain.to_string(),
            batches,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Ordered training records; serialises as a JSON array.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, epoch: usize, loss: f64, val_accuracy: Option<f64>) {
        self.records.push(EpochRecord {
            epoch,
            loss,
            val_accuracy,
        });
    }

    /// Earliest epoch holding the maximum validation accuracy.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in &self.records {
            if let Some(acc) = r.val_accuracy {
                if best.map_or(true, |(_, b)| acc > b) {
                    best = Some((r.epoch, acc));
                }
            }
        }
        best.map(|(e, _)| e)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Stop once the best epoch lies in the first half of the completed epochs
/// (with at least four epochs done).
pub fn early_stop_check(history: &TrainHistory, epoch: usize) -> bool {
    match history.best_epoch() {
        Some(best) => epoch >= 4 && best <= epoch / 2,
        None => false,
    }
}

fn train_step<T, F>(params: &mut ParamSet, opt: &mut OptimizerState, batch: &[T], noise: u64, loss: &F) -> Result<f64>
where
    F: Fn(&ParamSet, &[T], u64) -> Result<(Graph, Var)>,
{
    let (g, l) = loss(params, batch, noise)?;
    params.zero_grad();
    g.backward_into(l, params)?;
    opt.step(params)?;
    Ok(g.scalar(l))
}

/// `k` optimizer steps from a copy of `theta`, cycling through the episode's
/// batches. Returns the adapted parameters and the mean step loss.
pub fn inner_adapt<T, F>(
    theta: &ParamSet,
    episode: &Episode<T>,
    beta: f64,
    k: usize,
    kind: OptimizerKind,
    noise_seed: u64,
    loss: &F,
) -> Result<(ParamSet, f64)>
where
    F: Fn(&ParamSet, &[T], u64) -> Result<(Graph, Var)>,
{
    if episode.batches.is_empty() || episode.batches.iter().any(Vec::is_empty) {
        return Err(Error::EmptyEpisode);
    }
    let mut adapted = theta.clone();
    let mut opt = OptimizerState::new(kind, beta);
    let mut total = 0.0;
    for step in 0..k {
        let batch = &episode.batches[step % episode.batches.len()];
        total += train_step(&mut adapted, &mut opt, batch, noise_seed.wrapping_add(step as u64), loss)?;
    }
    adapted.zero_grad();
    Ok((adapted, total / k.max(1) as f64))
}

/// `theta + alpha (theta_d - theta)` per value.
pub fn reptile_update(theta: &ParamSet, theta_d: &ParamSet, alpha: f64) -> Result<ParamSet> {
    theta.check_compatible(theta_d)?;
    let mut out = theta.clone();
    for ((_, t), (_, d)) in out.iter_mut().zip(theta_d.iter()) {
        for (v, &w) in t.data_mut().iter_mut().zip(d.data()) {
            let a = f64::from(*v);
            *v = (a + alpha * (f64::from(w) - a)) as f32;
        }
        t.clear_grad();
    }
    Ok(out)
}

/// `theta - alpha * grad L(theta_d, query)`.
pub fn fomaml_update<T, F>(
    theta: &ParamSet,
    theta_d: &ParamSet,
    query: &[T],
    alpha: f64,
    noise_seed: u64,
    loss: &F,
) -> Result<(ParamSet, f64)>
where
    F: Fn(&ParamSet, &[T], u64) -> Result<(Graph, Var)>,
{
    if query.is_empty() {
        return Err(Error::EmptyBatch("fomaml query"));
    }
    theta.check_compatible(theta_d)?;
    let mut at_d = theta_d.clone();
    at_d.zero_grad();
    let (g, l) = loss(&at_d, query, noise_seed)?;
    g.backward_into(l, &mut at_d)?;
    let mut out = theta.clone();
    for ((name, t), (_, d)) in out.iter_mut().zip(at_d.iter()) {
        if !t.requires_grad() {
            continue;
        }
        let grad = d.grad().ok_or_else(|| ComputeError::MissingGradient { name: name.to_string() })?;
        for (v, &gv) in t.data_mut().iter_mut().zip(grad) {
            *v = (f64::from(*v) - alpha * f64::from(gv)) as f32;
        }
        t.clear_grad();
    }
    Ok((out, g.scalar(l)))
}

/// Stage-two training over per-domain example pools. Records one entry per
/// episode with the mean loss seen in that episode.
pub fn source_train<T, F>(
    params: &ParamSet,
    domains: &IndexMap<String, Vec<T>>,
    config: &MetaConfig,
    loss: &F,
) -> Result<(ParamSet, TrainHistory)>
where
    T: Clone,
    F: Fn(&ParamSet, &[T], u64) -> Result<(Graph, Var)>,
{
    config.validate()?;
    let names: Vec<&String> = domains.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k).collect();
    if config.method != MetaMethod::Multitask && names.len() < 2 {
        return Err(Error::TooFewDomains {
            method: config.method.name().to_string(),
            found: names.len(),
        });
    }
    if names.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = params.clone();
    let mut history = TrainHistory::default();
    let k = config.inner_steps;
    match config.method {
        MetaMethod::Multitask => {
            let pooled: Vec<T> = names.iter().flat_map(|n| domains[n.as_str()].iter().cloned()).collect();
            let mut opt = OptimizerState::new(config.inner_optimizer, config.inner_lr);
            for e in 0..config.episodes {
                let ep = Episode::sample("*", &pooled, k, config.batch_size, &mut rng);
                let mut total = 0.0;
                for batch in &ep.batches {
                    total += train_step(&mut theta, &mut opt, batch, rng.gen(), loss)?;
                }
                history.push(e + 1, total / k as f64, None);
            }
        }
        MetaMethod::Reptile => {
            for e in 0..config.episodes {
                let d = names[rng.gen_range(0..names.len())];
                let ep = Episode::sample(d, &domains[d.as_str()], k, config.batch_size, &mut rng);
                let (adapted, l) = inner_adapt(&theta, &ep, config.inner_lr, k, config.inner_optimizer, rng.gen(), loss)?;
                theta = reptile_update(&theta, &adapted, config.outer_lr)?;
                history.push(e + 1, l, None);
            }
        }
        MetaMethod::Fomaml => {
            for e in 0..config.episodes {
                let d = names[rng.gen_range(0..names.len())];
                let ep = Episode::sample(d, &domains[d.as_str()], 2, config.batch_size, &mut rng);
                let support = Episode {
                    domain: ep.domain.clone(),
                    batches: vec![ep.batches[0].clone()],
                };
                let (adapted, _) =
                    inner_adapt(&theta, &support, config.inner_lr, k, config.inner_optimizer, rng.gen(), loss)?;
                let (next, l) = fomaml_update(&theta, &adapted, &ep.batches[1], config.outer_lr, rng.gen(), loss)?;
                theta = next;
                history.push(e + 1, l, None);
            }
        }
    }
    theta.zero_grad();
    Ok((theta, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            lr: 1e-3,
            batch_size: 8,
            seed: 271,
        }
    }
}

/// Adam epochs over the few-shot set. Returns the snapshot from the epoch
/// with the best validation accuracy (the last epoch when validation is empty).
pub fn finetune<T, F, A>(
    params: &ParamSet,
    few_shot: &[T],
    validation: &[T],
    config: &FinetuneConfig,
    loss: &F,
    accuracy: &A,
) -> Result<(ParamSet, TrainHistory)>
where
    T: Clone,
    F: Fn(&ParamSet, &[T], u64) -> Result<(Graph, Var)>,
    A: Fn(&ParamSet, &[T]) -> Result<f64>,
{
    if few_shot.is_empty() {
        return Err(Error::EmptyBatch("finetune few-shot set"));
    }
    if validation.is_empty() {
        log::warn!("validation set is empty; early stopping disabled");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::adam(config.lr);
    let mut theta = params.clone();
    let mut best = theta.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..few_shot.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<T> = chunk.iter().map(|&i| few_shot[i].clone()).collect();
            total += train_step(&mut theta, &mut opt, &batch, rng.gen(), loss)?;
            batches += 1;
        }
        let loss_mean = total / batches as f64;
        if validation.is_empty() {
            history.push(epoch, loss_mean, None);
            best = theta.clone();
            continue;
        }
        let acc = accuracy(&theta, validation)?;
        let previous = history.best_epoch();
        history.push(epoch, loss_mean, Some(acc));
        if history.best_epoch() != previous {
            best = theta.clone();
        }
        if early_stop_check(&history, epoch) {
            break;
        }
    }
    best.zero_grad();
    Ok((best, history))
}
