//! Layer helpers shared by the latent models and the response generator.
//!
//! Layers are plain naming conventions over a [`ParamSet`]:
//! a linear layer `name` owns `name.w [in, out]` and `name.b [out]`; a GRU
//! `name` owns `name.w_x [in, 3h]`, `name.w_h [h, 3h]`, `name.b_x [3h]` and
//! `name.b_h [3h]` with gate blocks ordered reset, update, candidate.

use rand::Rng;

use crate::compute::{ComputeError, Graph, ParamSet, Tensor, Var};

pub fn init_linear<R: Rng + ?Sized>(
    params: &mut ParamSet,
    name: &str,
    input: usize,
    output: usize,
    rng: &mut R,
) -> Result<(), ComputeError> {
    let scale = (6.0 / (input + output) as f32).sqrt();
    params.insert(format!("{name}.w"), Tensor::uniform(&[input, output], scale, rng).trainable())?;
    params.insert(format!("{name}.b"), Tensor::zeros(&[output]).trainable())
}

pub fn init_embedding<R: Rng + ?Sized>(
    params: &mut ParamSet,
    name: &str,
    vocab: usize,
    dim: usize,
    rng: &mut R,
) -> Result<(), ComputeError> {
    params.insert(name, Tensor::uniform(&[vocab, dim], 0.1, rng).trainable())
}

pub fn init_gru<R: Rng + ?Sized>(
    params: &mut ParamSet,
    name: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<(), ComputeError> {
    let scale = 1.0 / (hidden as f32).sqrt();
    params.insert(format!("{name}.w_x"), Tensor::uniform(&[input, 3 * hidden], scale, rng).trainable())?;
    params.insert(format!("{name}.w_h"), Tensor::uniform(&[hidden, 3 * hidden], scale, rng).trainable())?;
    params.insert(format!("{name}.b_x"), Tensor::zeros(&[3 * hidden]).trainable())?;
    params.insert(format!("{name}.b_h"), Tensor::zeros(&[3 * hidden]).trainable())
}

/// `x W + b` for `x [m, in]`.
pub fn linear(g: &mut Graph, params: &ParamSet, name: &str, x: Var) -> Result<Var, ComputeError> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let xw = g.matmul(x, w);
    Ok(g.add_row(xw, b))
}

/// A GRU bound to one graph; weights are looked up once.
pub struct Gru {
    w_x: Var,
    w_h: Var,
    b_x: Var,
    b_h: Var,
    hidden: usize,
}

impl Gru {
    pub fn bind(g: &mut Graph, params: &ParamSet, name: &str) -> Result<Self, ComputeError> {
        let w_h = g.param(params, &format!("{name}.w_h"))?;
        Ok(Self {
            w_x: g.param(params, &format!("{name}.w_x"))?,
            w_h,
            b_x: g.param(params, &format!("{name}.b_x"))?,
            b_h: g.param(params, &format!("{name}.b_h"))?,
            hidden: g.shape(w_h).0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Input projections `x W_x + b_x` for every row of `inputs` at once.
    pub fn project_inputs(&self, g: &mut Graph, inputs: Var) -> Var {
        let xw = g.matmul(inputs, self.w_x);
        g.add_row(xw, self.b_x)
    }

    /// One step from a precomputed input projection row `[1, 3h]`.
    pub fn step_projected(&self, g: &mut Graph, x_proj: Var, h: Var) -> Var {
        let n = self.hidden;
        let hw = g.matmul(h, self.w_h);
        let hw = g.add_row(hw, self.b_h);
        let xr = g.slice_cols(x_proj, 0, n);
        let xz = g.slice_cols(x_proj, n, n);
        let xn = g.slice_cols(x_proj, 2 * n, n);
        let hr = g.slice_cols(hw, 0, n);
        let hz = g.slice_cols(hw, n, n);
        let hn = g.slice_cols(hw, 2 * n, n);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn);
        let cand = g.add(xn, rh);
        let cand = g.tanh(cand);
        // h' = (1 - z) * cand + z * h = cand + z * (h - cand)
        let diff = g.sub(h, cand);
        let zd = g.mul(z, diff);
        g.add(cand, zd)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let p = self.project_inputs(g, x);
        self.step_projected(g, p, h)
    }

    /// Runs over the rows of `inputs [T, in]`, returning every hidden state.
    pub fn run(&self, g: &mut Graph, inputs: Var, h0: Var) -> Vec<Var> {
        let steps = g.shape(inputs).0;
        let proj = self.project_inputs(g, inputs);
        let mut h = h0;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let row = g.slice_rows(proj, t, 1);
            h = self.step_projected(g, row, h);
            states.push(h);
        }
        states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer_loss(p: &ParamSet) -> Result<(Graph, Var), ComputeError> {
        let mut g = Graph::new();
        let emb = g.param(p, "emb")?;
        let x = g.gather(emb, &[0, 3, 1, 2]);
        let l1 = Gru::bind(&mut g, p, "l1")?;
        let l2 = Gru::bind(&mut g, p, "l2")?;
        let h0 = g.zeros(1, 5);
        let s1 = l1.run(&mut g, x, h0);
        let stacked = g.concat_rows(&s1);
        let h0b = g.zeros(1, 4);
        let s2 = l2.run(&mut g, stacked, h0b);
        let last = *s2.last().unwrap();
        let logits = linear(&mut g, p, "out", last)?;
        let logp = g.log_softmax(logits);
        let picked = g.pick(logp, &[(0, 2)]);
        let loss = g.neg(picked);
        Ok((g, loss))
    }

    #[test]
    fn two_layer_gru_cross_entropy_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p = ParamSet::new();
        init_embedding(&mut p, "emb", 4, 3, &mut rng).unwrap();
        init_gru(&mut p, "l1", 3, 5, &mut rng).unwrap();
        init_gru(&mut p, "l2", 5, 4, &mut rng).unwrap();
        init_linear(&mut p, "out", 4, 3, &mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let (g, loss) = two_layer_loss(&p).unwrap();
        g.backward_into(loss, &mut p).unwrap();
        let report = finite_diff_check(
            |q: &ParamSet| -> Result<f64, ComputeError> {
                let (g, l) = two_layer_loss(q)?;
                Ok(g.scalar(l))
            },
            &p,
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn gru_zero_update_gate_passes_candidate() {
        // with all weights zero: r = z = 0.5, cand = tanh(0) = 0, h' = 0.5 h
        let mut p = ParamSet::new();
        for (n, s) in [("g.w_x", [2, 6]), ("g.w_h", [2, 6])] {
            p.insert(n, Tensor::zeros(&s)).unwrap();
        }
        p.insert("g.b_x", Tensor::zeros(&[6])).unwrap();
        p.insert("g.b_h", Tensor::zeros(&[6])).unwrap();
        let mut g = Graph::new();
        let gru = Gru::bind(&mut g, &p, "g").unwrap();
        let x = g.row(vec![1.0, -1.0]);
        let h = g.row(vec![0.4, -0.8]);
        let out = gru.step(&mut g, x, h);
        assert_eq!(g.value(out), &[0.2, -0.4]);
    }
}
