use indexmap::IndexMap;
use rand::Rng;

use super::ComputeError;

/// Dense row-major array of 32-bit values with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ComputeError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(ComputeError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ComputeError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Uniform initialisation in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as trainable.
    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<(), ComputeError> {
        if grad.len() != self.data.len() {
            return Err(ComputeError::DataLength {
                shape: self.shape.clone(),
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d as f32;
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// (rows, cols) view used by the graph: trailing dimension is columns.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap_or(&1);
                (self.data.len() / c.max(1), c)
            }
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ComputeError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(ComputeError::DuplicateParam { name });
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor, ComputeError> {
        self.entries
            .get(name)
            .ok_or_else(|| ComputeError::MissingParam { name: name.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.entries.values_mut() {
            t.clear_grad();
        }
    }

    pub fn set_trainable(&mut self, on: bool) {
        for t in self.entries.values_mut() {
            t.set_requires_grad(on);
        }
    }

    /// Same names in the same order with matching shapes.
    pub fn is_shape_compatible(&self, other: &ParamSet) -> bool {
        self.check_compatible(other).is_ok()
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<(), ComputeError> {
        if self.len() != other.len() {
            let missing = self
                .names()
                .find(|n| other.get(n).is_none())
                .or_else(|| other.names().find(|n| self.get(n).is_none()))
                .unwrap_or("<count>");
            return Err(ComputeError::Incompatible {
                name: missing.to_string(),
            });
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(ComputeError::Incompatible { name: a.to_string() });
            }
        }
        Ok(())
    }

    /// Value-only copy with gradients dropped.
    pub fn detached(&self) -> ParamSet {
        let mut out = self.clone();
        out.zero_grad();
        out
    }

    /// Bitwise equality of values (ignores gradients).
    pub fn values_equal(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((a, ta), (b, tb))| {
                a == b
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Absorbs the entries of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet) -> Result<(), ComputeError> {
        for (name, t) in other.entries {
            self.insert(format!("{prefix}{name}"), t)?;
        }
        Ok(())
    }
}
