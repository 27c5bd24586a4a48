use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ComputeError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Learning rate plus Adam moments. One state per optimised [`ParamSet`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: IndexMap<String, Vec<f32>>,
    second_moment: IndexMap<String, Vec<f32>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.epsilon = epsilon;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f32]> {
        self.first_moment.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f32]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }

    /// Applies one update of whichever kind this state was built for.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), ComputeError> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, self),
            OptimizerKind::Adam => adam_step(params, self),
        }
    }
}

fn require_grads(params: &ParamSet) -> Result<(), ComputeError> {
    for (name, t) in params.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(ComputeError::MissingGradient {
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

/// `v <- v - lr * g` for every trainable entry.
pub fn sgd_step(params: &mut ParamSet, state: &mut OptimizerState) -> Result<(), ComputeError> {
    if state.kind != OptimizerKind::Sgd {
        return Err(ComputeError::WrongOptimizer { expected: "sgd" });
    }
    require_grads(params)?;
    let lr = state.learning_rate;
    for (_, t) in params.iter_mut() {
        if !t.requires_grad() {
            continue;
        }
        let grad = t.grad().map(<[f32]>::to_vec).unwrap_or_default();
        for (v, g) in t.data_mut().iter_mut().zip(grad) {
            *v = (*v as f64 - lr * g as f64) as f32;
        }
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut ParamSet, state: &mut OptimizerState) -> Result<(), ComputeError> {
    if state.kind != OptimizerKind::Adam {
        return Err(ComputeError::WrongOptimizer { expected: "adam" });
    }
    if !(0.0..1.0).contains(&state.beta1) || !(0.0..1.0).contains(&state.beta2) || state.epsilon <= 0.0 {
        return Err(ComputeError::InvalidAdamConstants);
    }
    require_grads(params)?;
    let t = state.step + 1;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (name, tensor) in params.iter_mut() {
        if !tensor.requires_grad() {
            continue;
        }
        let n = tensor.numel();
        let m = state
            .first_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        if m.len() != n {
            return Err(ComputeError::Incompatible {
                name: name.to_string(),
            });
        }
        let v = state
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let grad = tensor.grad().map(<[f32]>::to_vec).unwrap_or_default();
        for (((theta, g), mi), vi) in tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g as f64;
            let m_new = b1 * *mi as f64 + (1.0 - b1) * g;
            let v_new = b2 * *vi as f64 + (1.0 - b2) * g * g;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *theta = (*theta as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    state.step = t;
    Ok(())
}
