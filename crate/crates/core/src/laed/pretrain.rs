use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predictor::PredictorConfig;
use super::{LaedConfig, LaedKind, LaedModel, LatentOptions, PredictorSample, SysLatentPredictor, Triple, VstTerms};
use crate::compute::{OptimizerState, ParamSet};
use crate::corpus::{Dialogue, Speaker, Vocab, PAD_ID};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub y: usize,
    pub k: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub predictor_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_context: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            y: 10,
            k: 5,
            temperature: 1.0,
            epochs: 3,
            predictor_epochs: 3,
            learning_rate: 1e-3,
            batch_size: 16,
            max_context: 4,
        }
    }
}

/// The three frozen stage-one models.
#[derive(Clone, Debug, PartialEq)]
pub struct LaedArtifacts {
    pub divae: LaedModel,
    pub divst: LaedModel,
    pub predictor: SysLatentPredictor,
}

impl LaedArtifacts {
    pub fn y(&self) -> usize {
        self.divae.config.y
    }

    pub fn k(&self) -> usize {
        self.divae.config.k
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub divae_loss: Vec<f64>,
    /// Entry 0 is measured before training, entry `e` after epoch `e`.
    pub divae_accuracy: Vec<f64>,
    pub divst_loss: Vec<f64>,
    pub predictor_loss: Vec<f64>,
    #[serde(skip)]
    pub predictor_samples: Vec<PredictorSample>,
}

/// Shuffled minibatch epochs of Adam; returns the mean batch loss per epoch.
fn train_epochs<T, F>(
    params: &mut ParamSet,
    items: &[T],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
    mut after_epoch: impl FnMut(&ParamSet) -> Result<()>,
    loss: F,
) -> Result<Vec<f64>>
where
    F: Fn(&ParamSet, &[&T], u64) -> Result<(crate::compute::Graph, crate::compute::Var)>,
{
    let mut opt = OptimizerState::adam(lr);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<&T> = chunk.iter().map(|&i| &items[i]).collect();
            let (g, l) = loss(params, &batch, rng.gen())?;
            total += g.scalar(l);
            batches += 1;
            params.zero_grad();
            g.backward_into(l, params)?;
            opt.step(params)?;
        }
        history.push(total / batches.max(1) as f64);
        after_epoch(params)?;
    }
    Ok(history)
}

/// Trains DI-VAE on every utterance, DI-VST on consecutive-turn triples,
/// then the system-latent predictor against DI-VST codes of system turns.
pub fn pretrain_laed(
    dialogues: &[Dialogue],
    vocab: &Vocab,
    config: &PretrainConfig,
    seed: u64,
) -> Result<(LaedArtifacts, PretrainLog)> {
    let encoded: Vec<Vec<Vec<usize>>> = dialogues
        .iter()
        .map(|d| d.turns.iter().map(|t| vocab.encode(&t.tokens())).collect())
        .collect();
    let utterances: Vec<Vec<usize>> = encoded.iter().flatten().filter(|u| !u.is_empty()).cloned().collect();
    let mut triples = Vec::new();
    for turns in &encoded {
        for i in 0..turns.len() {
            let neighbour = |j: Option<usize>| j.and_then(|j| turns.get(j)).cloned().unwrap_or_else(|| vec![PAD_ID]);
            if turns.len() > 1 {
                triples.push(Triple {
                    prev: neighbour(i.checked_sub(1)),
                    current: turns[i].clone(),
                    next: neighbour(Some(i + 1)),
                });
            }
        }
    }
    if utterances.is_empty() || triples.is_empty() {
        return Err(Error::CorpusTooSmall(format!(
            "{} dialogue(s) yield {} utterance(s) and {} triple(s)",
            dialogues.len(),
            utterances.len(),
            triples.len()
        )));
    }

    let laed_config = LaedConfig {
        vocab_size: vocab.len(),
        embed_dim: config.embed_dim,
        hidden_dim: config.hidden_dim,
        y: config.y,
        k: config.k,
        temperature: config.temperature,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = PretrainLog::default();

    let mut divae = LaedModel::new(LaedKind::Divae, laed_config.clone(), rng.gen())?;
    log.divae_accuracy.push(divae.reconstruction_accuracy(&utterances)?);
    let mut accuracies = Vec::new();
    let template = divae.clone();
    log.divae_loss = train_epochs(
        &mut divae.params,
        &utterances,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        &mut rng,
        |p| {
            let probe = LaedModel { params: p.clone(), ..template.clone() };
            accuracies.push(probe.reconstruction_accuracy(&utterances)?);
            Ok(())
        },
        |p, batch, noise| {
            let batch: Vec<Vec<usize>> = batch.iter().map(|u| (*u).clone()).collect();
            let lg = template.divae_graph(p, &batch, &LatentOptions::training(noise))?;
            Ok((lg.graph, lg.loss))
        },
    )?;
    log.divae_accuracy.extend(accuracies);

    let mut divst = LaedModel::new(LaedKind::Divst, laed_config, rng.gen())?;
    let template = divst.clone();
    log.divst_loss = train_epochs(
        &mut divst.params,
        &triples,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        &mut rng,
        |_| Ok(()),
        |p, batch, noise| {
            let batch: Vec<Triple> = batch.iter().map(|t| (*t).clone()).collect();
            let lg = template.divst_graph(p, &batch, &LatentOptions::training(noise), VstTerms::default())?;
            Ok((lg.graph, lg.loss))
        },
    )?;

    let mut samples = Vec::new();
    for (d, turns) in dialogues.iter().zip(&encoded) {
        for (t, turn) in d.turns.iter().enumerate() {
            if turn.speaker == Speaker::Sys && t > 0 {
                samples.push(PredictorSample {
                    context: turns[..t - 1].to_vec(),
                    user: turns[t - 1].clone(),
                    target: divst.recognize(&turns[t])?,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::CorpusTooSmall("no system turns to train the latent predictor".into()));
    }
    let mut predictor = SysLatentPredictor::new(
        PredictorConfig {
            vocab_size: vocab.len(),
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            y: config.y,
            k: config.k,
            max_context: config.max_context,
        },
        rng.gen(),
    )?;
    let template = predictor.clone();
    log.predictor_loss = train_epochs(
        &mut predictor.params,
        &samples,
        config.predictor_epochs,
        config.batch_size,
        config.learning_rate,
        &mut rng,
        |_| Ok(()),
        |p, batch, _| {
            let batch: Vec<PredictorSample> = batch.iter().map(|s| (*s).clone()).collect();
            template.loss_graph(p, &batch)
        },
    )?;
    log.predictor_samples = samples;

    for params in [&mut divae.params, &mut divst.params, &mut predictor.params] {
        params.zero_grad();
        params.set_trainable(false);
    }
    Ok((LaedArtifacts { divae, divst, predictor }, log))
}
