//! Numerical substrate: tensors, parameter sets, reverse-mode
//! differentiation, optimisers and a finite-difference checker.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use gradcheck::{finite_diff_check, GradCheck, REL_ERROR_FLOOR};
pub use graph::{argmax, log_sum_exp, sigmoid, softmax_in_place, Gradients, Graph, Var};
pub use optim::{adam_step, sgd_step, OptimizerKind, OptimizerState};
pub use tensor::{ParamSet, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("shape {shape:?} has a zero dimension")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("parameter `{name}` already present")]
    DuplicateParam { name: String },
    #[error("parameter `{name}` not found")]
    MissingParam { name: String },
    #[error("parameter `{name}` has no gradient")]
    MissingGradient { name: String },
    #[error("parameter sets disagree at `{name}`")]
    Incompatible { name: String },
    #[error("loss must be scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("node {index} does not belong to this graph")]
    UnknownNode { index: usize },
    #[error("node {index} depends on a later node")]
    Cycle { index: usize },
    #[error("optimizer state is not {expected}")]
    WrongOptimizer { expected: &'static str },
    #[error("adam requires beta1, beta2 in [0,1) and epsilon > 0")]
    InvalidAdamConstants,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("distributions have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("not a probability vector (sum {sum})")]
    NotADistribution { sum: f64 },
    #[error("divergence is infinite: q > 0 where p = 0 at index {index}")]
    InfiniteDivergence { index: usize },
}

/// Row-wise softmax of a tensor (last dimension).
pub fn softmax(logits: &Tensor) -> Tensor {
    let (_, cols) = logits.as_matrix();
    let mut out = logits.clone();
    out.set_requires_grad(false);
    for row in out.data_mut().chunks_mut(cols) {
        let mut r: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        softmax_in_place(&mut r);
        for (o, v) in row.iter_mut().zip(r) {
            *o = v as f32;
        }
    }
    out
}

/// Standard Gumbel draw `-ln(-ln u)`.
pub fn sample_gumbel<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((logits + g) / temperature)` per row, with `g` either supplied or
/// drawn from `rng`.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    logits: &Tensor,
    temperature: f64,
    noise: Option<&[f64]>,
    rng: &mut R,
) -> Result<Tensor, ComputeError> {
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(ComputeError::InvalidTemperature(temperature));
    }
    let drawn;
    let noise = match noise {
        Some(n) => {
            if n.len() != logits.numel() {
                return Err(ComputeError::LengthMismatch(n.len(), logits.numel()));
            }
            n
        }
        None => {
            drawn = sample_gumbel(logits.numel(), rng);
            &drawn
        }
    };
    let (_, cols) = logits.as_matrix();
    let mut out = logits.clone();
    out.set_requires_grad(false);
    for (row, nrow) in out.data_mut().chunks_mut(cols).zip(noise.chunks(cols)) {
        let mut r: Vec<f64> = row
            .iter()
            .zip(nrow)
            .map(|(&x, g)| (x as f64 + g) / temperature)
            .collect();
        softmax_in_place(&mut r);
        for (o, v) in row.iter_mut().zip(r) {
            *o = v as f32;
        }
    }
    Ok(out)
}

fn check_distribution(v: &[f64]) -> Result<(), ComputeError> {
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || v.iter().any(|x| *x < 0.0 || x.is_nan()) {
        return Err(ComputeError::NotADistribution { sum });
    }
    Ok(())
}

/// `sum q ln(q / p)` with `0 ln 0 = 0`.
pub fn kl_categorical(q: &[f64], p: &[f64]) -> Result<f64, ComputeError> {
    if q.len() != p.len() {
        return Err(ComputeError::LengthMismatch(q.len(), p.len()));
    }
    check_distribution(q)?;
    check_distribution(p)?;
    let mut kl = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(ComputeError::InfiniteDivergence { index: i });
        }
        kl += qi * (qi / pi).ln();
    }
    Ok(kl.max(0.0))
}

/// Sum of per-row divergences for stacked distributions of width `k`.
pub fn kl_categorical_rows(q: &[f64], p: &[f64], k: usize) -> Result<f64, ComputeError> {
    if q.len() != p.len() || k == 0 || q.len() % k != 0 {
        return Err(ComputeError::LengthMismatch(q.len(), p.len()));
    }
    q.chunks(k)
        .zip(p.chunks(k))
        .map(|(a, b)| kl_categorical(a, b))
        .sum()
}
