//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! Every value in a [`Graph`] is a `rows x cols` matrix; vectors are single
//! rows. Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is one reverse sweep. Parameters enter
//! through [`Graph::param`], which binds a leaf to a named entry of a
//! [`ParamSet`] so gradients can be written back by name.
//!
//! Activations are held in `f64` even though parameters are stored as `f32`;
//! central-difference checks on `f32` activations cannot resolve a relative
//! error of 1e-3.
//!
//! Shape errors inside the graph are programming errors and panic.

use std::collections::HashMap;

use rand::Rng;

use super::{ComputeError, ParamSet};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    Reshape(Var),
    Mask { src: Var, mask: Vec<f64> },
    Sum(Var),
    Pick { src: Var, flat: Vec<usize> },
    ScatterCols { src: Var, ids: Vec<usize> },
    StraightThrough(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// One differentiable computation. Build, call [`Graph::backward`], drop.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    training: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph with dropout active.
    pub fn training() -> Self {
        Self {
            training: true,
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on a {}x{} node", n.rows, n.cols);
        n.value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant data length");
        self.push(value, rows, cols, Op::Leaf, false)
    }

    pub fn row(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.constant(1, n, value)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(rows, cols, vec![0.0; rows * cols])
    }

    /// Differentiable leaf not tied to a parameter set.
    pub fn variable(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "variable data length");
        self.push(value, rows, cols, Op::Leaf, true)
    }

    /// Leaf bound to `params[name]`. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, ComputeError> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = params.expect(name)?;
        let (rows, cols) = t.as_matrix();
        let value = t.data().iter().map(|&x| x as f64).collect();
        let v = self.push(value, rows, cols, Op::Leaf, t.requires_grad());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        let (na, nb) = (self.node(a), self.node(b));
        assert!(
            na.rows == nb.rows && na.cols == nb.cols,
            "{op}: shape {}x{} vs {}x{}",
            na.rows,
            na.cols,
            nb.rows,
            nb.cols
        );
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.needs(&[a, b]);
        self.push(value, rows, cols, op, ng)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        let ng = self.needs(&[a]);
        self.push(value, rows, cols, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.zip_map(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a [m,n] + b [1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(b), (1, cols), "add_row: bias must be 1x{cols}");
        let bv = self.value(b).to_vec();
        let value = self
            .value(a)
            .chunks(cols)
            .flat_map(|r| r.iter().zip(&bv).map(|(x, y)| x + y))
            .collect();
        let ng = self.needs(&[a, b]);
        self.push(value, rows, cols, Op::AddRow(a, b), ng)
    }

    /// Scales every entry of `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by: scale must be 1x1");
        let k = self.value(s)[0];
        let (rows, cols) = self.shape(a);
        let value = self.value(a).iter().map(|x| k * x).collect();
        let ng = self.needs(&[s, a]);
        self.push(value, rows, cols, Op::ScaleBy(s, a), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Shift(a), |x| x + c)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.shift(n, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: {m}x{k} @ {k2}x{n}");
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(out, m, n, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        self.push(out, c, r, Op::Transpose(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for r in out.chunks_mut(cols) {
            softmax_in_place(r);
        }
        let ng = self.needs(&[a]);
        self.push(out, rows, cols, Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for r in out.chunks_mut(cols) {
            let lse = log_sum_exp(r);
            for x in r.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.needs(&[a]);
        self.push(out, rows, cols, Op::LogSoftmax(a), ng)
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (vocab, cols) = self.shape(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < vocab, "gather: id {id} out of range {vocab}");
            out.extend_from_slice(&tv[id * cols..(id + 1) * cols]);
        }
        let ng = self.needs(&[table]);
        self.push(
            out,
            ids.len(),
            cols,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let (pr, pc) = self.shape(*p);
                assert_eq!(pr, rows, "concat_cols: row mismatch");
                out.extend_from_slice(&self.value(*p)[r * pc..(r + 1) * pc]);
            }
        }
        let ng = self.needs(parts);
        self.push(out, rows, cols, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let cols = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (pr, pc) = self.shape(*p);
            assert_eq!(pc, cols, "concat_rows: col mismatch");
            out.extend_from_slice(self.value(*p));
            rows += pr;
        }
        let ng = self.needs(parts);
        self.push(out, rows, cols, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(src);
        assert!(start + len <= cols, "slice_cols out of range");
        let sv = self.value(src);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&sv[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(&[src]);
        self.push(out, rows, len, Op::SliceCols { src, start }, ng)
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(src);
        assert!(start + len <= rows, "slice_rows out of range");
        let out = self.value(src)[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(&[src]);
        self.push(out, len, cols, Op::SliceRows { src, start }, ng)
    }

    /// Same data viewed as `rows x cols`.
    pub fn reshape(&mut self, src: Var, rows: usize, cols: usize) -> Var {
        let n = self.value(src).len();
        assert_eq!(n, rows * cols, "reshape size");
        let out = self.value(src).to_vec();
        let ng = self.needs(&[src]);
        self.push(out, rows, cols, Op::Reshape(src), ng)
    }

    /// Inverted dropout. Identity outside training mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Elementwise product with a fixed mask.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(mask.len(), rows * cols, "mask length");
        let value = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let ng = self.needs(&[a]);
        self.push(value, rows, cols, Op::Mask { src: a, mask }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.needs(&[a]);
        self.push(vec![s], 1, 1, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of a list of `1 x 1` nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty(), "add_all: no terms");
        let row = self.concat_cols(terms);
        self.sum(row)
    }

    /// Picks one entry per listed `(row, col)` into a `1 x n` row.
    pub fn pick(&mut self, src: Var, coords: &[(usize, usize)]) -> Var {
        let (rows, cols) = self.shape(src);
        let flat: Vec<usize> = coords
            .iter()
            .map(|&(r, c)| {
                assert!(r < rows && c < cols, "pick out of range");
                r * cols + c
            })
            .collect();
        let sv = self.value(src);
        let out = flat.iter().map(|&i| sv[i]).collect();
        let ng = self.needs(&[src]);
        self.push(out, 1, flat.len(), Op::Pick { src, flat }, ng)
    }

    /// Sums the columns of a `1 x T` row into `width` buckets keyed by `ids`.
    pub fn scatter_cols(&mut self, src: Var, ids: &[usize], width: usize) -> Var {
        let (rows, cols) = self.shape(src);
        assert_eq!(rows, 1, "scatter_cols expects a row");
        assert_eq!(cols, ids.len(), "scatter_cols ids length");
        let mut out = vec![0.0; width];
        for (x, &id) in self.value(src).iter().zip(ids) {
            assert!(id < width, "scatter id {id} >= width {width}");
            out[id] += x;
        }
        let ng = self.needs(&[src]);
        self.push(
            out,
            1,
            width,
            Op::ScatterCols {
                src,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Row-wise one-hot of the argmax in the forward pass, identity gradient.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let (rows, cols) = self.shape(a);
        let mut out = vec![0.0; rows * cols];
        for (r, row) in self.value(a).chunks(cols).enumerate() {
            out[r * cols + argmax(row)] = 1.0;
        }
        let ng = self.needs(&[a]);
        self.push(out, rows, cols, Op::StraightThrough(a), ng)
    }

    /// Relaxed categorical sample `softmax((logits + noise) / temperature)`.
    pub fn gumbel_softmax(&mut self, logits: Var, noise: &[f64], temperature: f64) -> Var {
        assert!(temperature > 0.0, "gumbel_softmax: temperature must be positive");
        let (rows, cols) = self.shape(logits);
        let noise = self.constant(rows, cols, noise.to_vec());
        let perturbed = self.add(logits, noise);
        let scaled = self.scale(perturbed, 1.0 / temperature);
        self.softmax(scaled)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ComputeError> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or(ComputeError::UnknownNode { index: loss.0 })?;
        if root.value.len() != 1 {
            return Err(ComputeError::NonScalarLoss {
                rows: root.rows,
                cols: root.cols,
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs `backward` and accumulates gradients of bound parameters into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<(), ComputeError> {
        let grads = self.backward(loss)?;
        for (name, v) in &self.bound {
            if let Some(g) = grads.wrt(*v) {
                if let Some(t) = params.get_mut(name) {
                    if t.requires_grad() {
                        t.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), ComputeError> {
        let check = |v: Var| -> Result<(), ComputeError> {
            if v.0 >= i {
                Err(ComputeError::Cycle { index: i })
            } else {
                Ok(())
            }
        };
        let nodes = &self.nodes;
        macro_rules! target {
            ($v:expr) => {{
                let v: Var = $v;
                check(v)?;
                if nodes[v.0].needs_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = target!(*a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = target!(*b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = target!(*a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = target!(*b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = target!(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                }
                if let Some(gb) = target!(*b) {
                    for ((o, gi), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                }
            }
            Op::AddRow(a, b) => {
                let cols = node.cols;
                if let Some(ga) = target!(*a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = target!(*b) {
                    for r in g.chunks(cols) {
                        axpy(gb, 1.0, r);
                    }
                }
            }
            Op::ScaleBy(s, a) => {
                let k = nodes[s.0].value[0];
                let av = &nodes[a.0].value;
                if let Some(gs) = target!(*s) {
                    gs[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>();
                }
                if let Some(ga) = target!(*a) {
                    axpy(ga, k, g);
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = target!(*a) {
                    axpy(ga, *k, g);
                }
            }
            Op::Shift(a) => {
                if let Some(ga) = target!(*a) {
                    axpy(ga, 1.0, g);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = target!(*a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = target!(*b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x != 0.0 {
                                axpy(&mut gb[p * n..(p + 1) * n], x, grow);
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
                if let Some(ga) = target!(*a) {
                    for x in 0..r {
                        for y in 0..c {
                            ga[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = &node.value;
                if let Some(ga) = target!(*a) {
                    for ((o, gi), s) in ga.iter_mut().zip(g).zip(out) {
                        *o += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let out = &node.value;
                if let Some(ga) = target!(*a) {
                    for ((o, gi), t) in ga.iter_mut().zip(g).zip(out) {
                        *o += gi * (1.0 - t * t);
                    }
                }
            }
            Op::Exp(a) => {
                let out = &node.value;
                if let Some(ga) = target!(*a) {
                    for ((o, gi), e) in ga.iter_mut().zip(g).zip(out) {
                        *o += gi * e;
                    }
                }
            }
            Op::Log(a) => {
                let inp = &nodes[a.0].value;
                if let Some(ga) = target!(*a) {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(inp) {
                        *o += gi / x;
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = node.cols;
                let out = &node.value;
                if let Some(ga) = target!(*a) {
                    for ((orow, grow), arow) in
                        out.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let inner = dot(grow, orow);
                        for ((o, gi), y) in arow.iter_mut().zip(grow).zip(orow) {
                            *o += y * (gi - inner);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let cols = node.cols;
                let out = &node.value;
                if let Some(ga) = target!(*a) {
                    for ((orow, grow), arow) in
                        out.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let total: f64 = grow.iter().sum();
                        for ((o, gi), y) in arow.iter_mut().zip(grow).zip(orow) {
                            *o += gi - y.exp() * total;
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let cols = node.cols;
                if let Some(gt) = target!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * cols..(id + 1) * cols], 1.0, &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].cols;
                    if let Some(gp) = target!(*p) {
                        for r in 0..node.rows {
                            axpy(
                                &mut gp[r * pc..(r + 1) * pc],
                                1.0,
                                &g[r * cols + offset..r * cols + offset + pc],
                            );
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = target!(*p) {
                        axpy(gp, 1.0, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { src, start } => {
                let sc = nodes[src.0].cols;
                let len = node.cols;
                if let Some(gs) = target!(*src) {
                    for r in 0..node.rows {
                        axpy(
                            &mut gs[r * sc + start..r * sc + start + len],
                            1.0,
                            &g[r * len..(r + 1) * len],
                        );
                    }
                }
            }
            Op::SliceRows { src, start } => {
                let cols = node.cols;
                if let Some(gs) = target!(*src) {
                    axpy(&mut gs[start * cols..start * cols + g.len()], 1.0, g);
                }
            }
            Op::Reshape(src) => {
                if let Some(gs) = target!(*src) {
                    axpy(gs, 1.0, g);
                }
            }
            Op::Mask { src, mask } => {
                if let Some(gs) = target!(*src) {
                    for ((o, gi), m) in gs.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = target!(*a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Pick { src, flat } => {
                if let Some(gs) = target!(*src) {
                    for (gi, &idx) in g.iter().zip(flat) {
                        gs[idx] += gi;
                    }
                }
            }
            Op::ScatterCols { src, ids } => {
                if let Some(gs) = target!(*src) {
                    for (o, &id) in gs.iter_mut().zip(ids) {
                        *o += g[id];
                    }
                }
            }
            Op::StraightThrough(a) => {
                if let Some(ga) = target!(*a) {
                    axpy(ga, 1.0, g);
                }
            }
        }
        Ok(())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences on graph-level variables.
    fn numeric_grad(build: &dyn Fn(&mut Graph, Var) -> Var, x0: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let h = 1e-5;
        (0..x0.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut x = x0.to_vec();
                    x[i] += delta;
                    let mut g = Graph::new();
                    let v = g.variable(rows, cols, x);
                    let out = build(&mut g, v);
                    g.scalar(out)
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn check_op(build: &dyn Fn(&mut Graph, Var) -> Var, rows: usize, cols: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut g = Graph::new();
        let v = g.variable(rows, cols, x0.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out).unwrap();
        let analytic = grads.wrt(v).map(|s| s.to_vec()).unwrap_or(vec![0.0; x0.len()]);
        let numeric = numeric_grad(build, &x0, rows, cols);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / n.abs().max(1e-3);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.variable(1, 1, vec![3.0]);
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut g = Graph::new();
        let v = g.variable(1, 4, vec![0.3, -1.2, 2.0, 0.0]);
        let s = g.softmax(v);
        let t = g.sum(s);
        let grads = g.backward(t).unwrap();
        for d in grads.wrt(v).unwrap() {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let v = g.variable(1, 2, vec![1.0, 2.0]);
        assert!(matches!(g.backward(v), Err(ComputeError::NonScalarLoss { .. })));
        assert!(matches!(
            g.backward(Var(99)),
            Err(ComputeError::UnknownNode { .. })
        ));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let cases: Vec<Box<dyn Fn(&mut Graph, Var) -> Var>> = vec![
            Box::new(|g, v| {
                let s = g.sigmoid(v);
                let t = g.tanh(s);
                let m = g.mul(t, v);
                g.sum(m)
            }),
            Box::new(|g, v| {
                let e = g.exp(v);
                let l = g.shift(e, 1.0);
                let l = g.log(l);
                g.mean(l)
            }),
            Box::new(|g, v| {
                let s = g.log_softmax(v);
                let p = g.pick(s, &[(0, 1), (1, 2)]);
                g.sum(p)
            }),
            Box::new(|g, v| {
                let s = g.softmax(v);
                let w = g.constant(2, 3, vec![0.1, -0.4, 0.7, 1.1, 0.2, -0.9]);
                let m = g.mul(s, w);
                g.sum(m)
            }),
            Box::new(|g, v| {
                let t = g.transpose(v);
                let p = g.matmul(v, t);
                let q = g.tanh(p);
                g.sum(q)
            }),
            Box::new(|g, v| {
                let a = g.slice_cols(v, 1, 2);
                let b = g.slice_cols(v, 0, 2);
                let c = g.concat_cols(&[a, b]);
                let ab = g.concat_rows(&[a, b]);
                let ab = g.concat_cols(&[ab, ab]);
                let d = g.concat_rows(&[c, ab]);
                let e = g.mul(d, d);
                let e = g.slice_rows(e, 1, 3);
                let e = g.reshape(e, 2, 6);
                let e = g.log_softmax(e);
                let e = g.pick(e, &[(0, 5), (1, 0)]);
                g.sum(e)
            }),
            Box::new(|g, v| {
                let r = g.slice_cols(v, 0, 3);
                let first = g.pick(r, &[(0, 0)]);
                let s = g.scale_by(first, v);
                let b = g.constant(1, 3, vec![0.5, -0.5, 0.25]);
                let s = g.add_row(s, b);
                let s = g.sigmoid(s);
                g.sum(s)
            }),
            Box::new(|g, v| {
                let row = g.slice_cols(v, 0, 3);
                let row = g.pick(row, &[(0, 0), (0, 1), (0, 2), (1, 0)]);
                let row = g.softmax(row);
                let sc = g.scatter_cols(row, &[2, 0, 2, 1], 3);
                let w = g.constant(1, 3, vec![0.3, 1.7, -0.8]);
                let m = g.mul(sc, w);
                let l = g.sum(m);
                let l = g.one_minus(l);
                g.mul(l, l)
            }),
        ];
        for (i, case) in cases.iter().enumerate() {
            check_op(case.as_ref(), 2, 3, i as u64);
        }
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut g = Graph::new();
        let table = g.variable(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = g.gather(table, &[2, 0, 2]);
        let s = g.sum(rows);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn straight_through_is_hard_forward_identity_backward() {
        let mut g = Graph::new();
        let v = g.variable(1, 3, vec![0.2, 0.5, 0.3]);
        let h = g.straight_through(v);
        assert_eq!(g.value(h), &[0.0, 1.0, 0.0]);
        let w = g.constant(1, 3, vec![1.0, 2.0, 3.0]);
        let m = g.mul(h, w);
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(v).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_inactive_outside_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let v = g.variable(1, 4, vec![1.0; 4]);
        assert_eq!(g.dropout(v, 0.5, &mut rng), v);
        let mut g = Graph::training();
        let v = g.variable(1, 1000, vec![1.0; 1000]);
        let d = g.dropout(v, 0.3, &mut rng);
        let kept = g.value(d).iter().filter(|x| **x > 0.0).count();
        assert!((600..800).contains(&kept));
        assert!(g.value(d).iter().all(|x| *x == 0.0 || (*x - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn repeated_backward_into_accumulates() {
        use crate::compute::Tensor;
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(vec![1], vec![3.0]).unwrap().trainable())
            .unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let y = g.mul(x, x);
        g.backward_into(y, &mut p).unwrap();
        g.backward_into(y, &mut p).unwrap();
        assert_eq!(p.get("x").unwrap().grad().unwrap(), &[12.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
