//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! value. Each op has one evaluation routine, shared by recording and
//! [`Tape::replay`], so replays are bit-identical. The dense resolvent node
//! keeps `L = (I - A)^-1` as its value and backpropagates with
//! `Ā = Lᵀ Ḡ Lᵀ`: two products with the cached inverse, counted.
//!
//! The module also records the whole mixer onto a tape
//! ([`record_mixer`]) so that every projection weight gets a gradient.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc as Shared;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{plan_dag, DagPlan, Graph};
use crate::linalg::DenseMatrix;
use crate::params::{
    arc_logits, dag_input_scale, is_undirected_line, line_rescale, line_sigma, neighbor_mean, pair_budget, row_normalize, sigmoid,
    softplus, swish, swish_grad, ArcLayout, LinePairs, Projection, ProjectionWeights, Regime, SsmParams, LINE_RESCALE_EPS,
};
use crate::resolvent::{default_depth, recurrence_backward, recurrence_kernel, squaring_power, Algorithm, Combine, MixConfig, RecurrenceInputs};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Swish,
    Softplus,
    Sigmoid,
    /// `exp(-x)`
    ExpNeg,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Swish => swish(x),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::ExpNeg => libm::exp(-x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Swish => swish_grad(x),
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::ExpNeg => -y,
        }
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// `a + 1·row`
    AddRow(Var, Var),
    /// `a[i,:] · s[i]`
    MulRows(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant.
    MulConst(Var, Shared<DenseMatrix>),
    IdentityPlus(Var),
    Transpose(Var),
    Unary(Var, Unary),
    /// `θ₀·u + θ₁·mean_N(u)`
    Conv(Var, Var, Shared<Vec<Vec<usize>>>),
    ColSlice(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ArcLogits { delta: Var, delta_src: Option<Var>, edge: Option<Var>, layout: Shared<ArcLayout> },
    RowNormalize { raw: Var, psi: Var, gamma: f64, layout: Shared<ArcLayout> },
    LineRescale { raw: Var, psi: Var, pairs: Shared<LinePairs> },
    DagInputScale { logits: Var, layout: Shared<ArcLayout>, normalized: bool },
    Densify { weights: Var, layout: Shared<ArcLayout> },
    Resolvent(Var),
    Recurrence { weights: Var, c: Var, bbar: Var, v: Var, order: Shared<Vec<usize>>, layout: Shared<ArcLayout> },
    LayerNorm { x: Var, scale: Var, shift: Var },
    SumSquares(Var),
    Mse(Var, Shared<DenseMatrix>),
    SoftmaxCrossEntropy(Var, Shared<Vec<usize>>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// Recorded forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    last_inverse_matmuls: Option<usize>,
}

/// Per-node adjoints from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    /// Products executed inside resolvent nodes during this pass.
    pub inverse_matmuls: usize,
}

impl Gradients {
    /// Adjoint of `var`, zero if nothing flowed into it.
    pub fn wrt(&self, tape: &Tape, var: Var) -> DenseMatrix {
        self.grads[var.0].clone().unwrap_or_else(|| {
            let (r, c) = tape.value(var).shape();
            DenseMatrix::zeros(r, c)
        })
    }

    /// One gradient per registered parameter, by name.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, DenseMatrix> {
        tape.params.iter().map(|(n, v)| (n.clone(), self.wrt(tape, *v))).collect()
    }
}

fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

fn col(v: &[f64]) -> DenseMatrix {
    DenseMatrix::column(v)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseMatrix {
        &self.nodes[var.0].value
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|p| p.1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: DenseMatrix) -> Var {
        let v = self.constant(value);
        self.params.push((name.into(), v));
        v
    }

    /// Overwrites a leaf value; call [`replay`](Self::replay) to propagate.
    pub fn set_value(&mut self, var: Var, value: DenseMatrix) -> Result<()> {
        let node = &mut self.nodes[var.0];
        if !matches!(node.op, Op::Leaf) || node.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch { op: "set_value", left: node.value.shape(), right: value.shape() });
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for k in 0..self.nodes.len() {
            if !matches!(self.nodes[k].op, Op::Leaf) {
                let op = self.nodes[k].op.clone();
                self.nodes[k].value = self.eval(&op)?;
            }
        }
        Ok(())
    }

    /// Replays a copy and checks every value is bit-identical.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut copy = self.clone();
        copy.replay()?;
        Ok(copy.nodes.iter().zip(&self.nodes).all(|(a, b)| {
            a.value.shape() == b.value.shape()
                && a.value.as_slice().iter().zip(b.value.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Hadamard(a, b))
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(a, row))
    }
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        self.push(Op::MulRows(a, s))
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }
    pub fn mul_const(&mut self, a: Var, k: Shared<DenseMatrix>) -> Result<Var> {
        self.push(Op::MulConst(a, k))
    }
    pub fn identity_plus(&mut self, a: Var) -> Result<Var> {
        self.push(Op::IdentityPlus(a))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }
    pub fn unary(&mut self, a: Var, f: Unary) -> Result<Var> {
        self.push(Op::Unary(a, f))
    }
    pub fn conv(&mut self, u: Var, theta: Var, nbrs: Shared<Vec<Vec<usize>>>) -> Result<Var> {
        self.push(Op::Conv(u, theta, nbrs))
    }
    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::ColSlice(a, start, len))
    }
    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.push(Op::ConcatCols(parts))
    }
    pub fn resolvent(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Resolvent(a))
    }
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.push(Op::LayerNorm { x, scale, shift })
    }
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumSquares(a))
    }
    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: DenseMatrix) -> Result<Var> {
        self.push(Op::Mse(a, Shared::new(target)))
    }
    /// Mean cross-entropy of row-wise softmax against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        self.push(Op::SoftmaxCrossEntropy(logits, Shared::new(labels)))
    }
    pub fn arc_logits(&mut self, delta: Var, delta_src: Option<Var>, edge: Option<Var>, layout: Shared<ArcLayout>) -> Result<Var> {
        self.push(Op::ArcLogits { delta, delta_src, edge, layout })
    }
    pub fn row_normalize(&mut self, raw: Var, psi: Var, gamma: f64, layout: Shared<ArcLayout>) -> Result<Var> {
        self.push(Op::RowNormalize { raw, psi, gamma, layout })
    }
    pub fn line_rescale(&mut self, raw: Var, psi: Var, pairs: Shared<LinePairs>) -> Result<Var> {
        self.push(Op::LineRescale { raw, psi, pairs })
    }
    pub fn dag_input_scale(&mut self, logits: Var, layout: Shared<ArcLayout>, normalized: bool) -> Result<Var> {
        self.push(Op::DagInputScale { logits, layout, normalized })
    }
    pub fn densify(&mut self, weights: Var, layout: Shared<ArcLayout>) -> Result<Var> {
        self.push(Op::Densify { weights, layout })
    }
    pub fn recurrence(&mut self, weights: Var, c: Var, bbar: Var, v: Var, order: Shared<Vec<usize>>, layout: Shared<ArcLayout>) -> Result<Var> {
        self.push(Op::Recurrence { weights, c, bbar, v, order, layout })
    }

    fn eval(&self, op: &Op) -> Result<DenseMatrix> {
        let val = |v: &Var| &self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never evaluated"),
            Op::MatMul(a, b) => val(a).matmul(val(b))?,
            Op::Add(a, b) => val(a).add(val(b))?,
            Op::Sub(a, b) => val(a).sub(val(b))?,
            Op::Hadamard(a, b) => val(a).hadamard(val(b))?,
            Op::AddRow(a, r) => {
                let (a, r) = (val(a), val(r));
                if r.rows() != 1 || r.cols() != a.cols() {
                    return Err(shape_err("add_row", a, r));
                }
                DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + r[(0, j)])
            }
            Op::MulRows(a, s) => {
                let (a, s) = (val(a), val(s));
                if s.cols() != 1 || s.rows() != a.rows() {
                    return Err(shape_err("mul_rows", a, s));
                }
                DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * s[(i, 0)])
            }
            Op::Scale(a, s) => val(a).scale(*s),
            Op::MulConst(a, k) => val(a).hadamard(k)?,
            Op::IdentityPlus(a) => val(a).identity_plus()?,
            Op::Transpose(a) => val(a).transpose(),
            Op::Unary(a, f) => val(a).map(|x| f.apply(x)),
            Op::Conv(u, theta, nbrs) => {
                let (u, th) = (val(u), val(theta));
                if th.shape() != (1, 2) || nbrs.len() != u.rows() {
                    return Err(shape_err("conv", u, th));
                }
                let m = neighbor_mean(u, nbrs);
                let (t0, t1) = (th[(0, 0)], th[(0, 1)]);
                DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| t0 * u[(i, j)] + t1 * m[(i, j)])
            }
            Op::ColSlice(a, s, l) => {
                let a = val(a);
                if s + l > a.cols() {
                    return Err(Error::ShapeMismatch { op: "col_slice", left: a.shape(), right: (*s, *l) });
                }
                a.slice_cols(*s, *l)
            }
            Op::ConcatCols(parts) => DenseMatrix::concat_cols(&parts.iter().map(|p| val(p).clone()).collect::<Vec<_>>())?,
            Op::ArcLogits { delta, delta_src, edge, layout } => {
                let p = SsmParams {
                    b: DenseMatrix::zeros(0, 0),
                    c: DenseMatrix::zeros(0, 0),
                    v: DenseMatrix::zeros(0, 0),
                    delta: val(delta).as_slice().to_vec(),
                    delta_src: delta_src.map(|d| val(&d).as_slice().to_vec()),
                    psi: Vec::new(),
                    edge_delta: edge.map(|e| val(&e).as_slice().to_vec()),
                };
                col(&arc_logits(layout, &p))
            }
            Op::RowNormalize { raw, psi, gamma, layout } => col(&row_normalize(layout, val(raw).as_slice(), val(psi).as_slice(), *gamma)),
            Op::LineRescale { raw, psi, pairs } => col(&line_rescale(pairs, val(raw).as_slice(), val(psi).as_slice())),
            Op::DagInputScale { logits, layout, normalized } => col(&dag_input_scale(layout, val(logits).as_slice(), *normalized)),
            Op::Densify { weights, layout } => {
                let w = val(weights).as_slice();
                let n = layout.num_nodes;
                let mut a = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for k in layout.row(i) {
                        a[(i, layout.src[k])] += w[k];
                    }
                }
                a
            }
            Op::Resolvent(a) => val(a).identity_minus()?.inverse()?,
            Op::Recurrence { weights, c, bbar, v, order, layout } => {
                let (c, bbar, v) = (val(c), val(bbar), val(v));
                if c.shape() != bbar.shape() || c.rows() != layout.num_nodes || v.rows() != layout.num_nodes {
                    return Err(shape_err("recurrence", c, bbar));
                }
                let inputs = RecurrenceInputs {
                    weights: val(weights).as_slice(),
                    c: c.as_slice(),
                    bbar: bbar.as_slice(),
                    v: v.as_slice(),
                    d: c.cols(),
                    dv: v.cols(),
                };
                let mut y = vec![0.0; layout.num_nodes * v.cols()];
                recurrence_kernel(order, layout, &inputs, &mut y, None);
                DenseMatrix::from_vec(layout.num_nodes, v.cols(), y)?
            }
            Op::LayerNorm { x, scale, shift } => {
                let (x, g, b) = (val(x), val(scale), val(shift));
                if g.shape() != (1, x.cols()) || b.shape() != (1, x.cols()) {
                    return Err(shape_err("layer_norm", x, g));
                }
                let mut out = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let (xh, _) = normalize_row(x.row(i));
                    for j in 0..x.cols() {
                        out[(i, j)] = xh[j] * g[(0, j)] + b[(0, j)];
                    }
                }
                out
            }
            Op::SumSquares(a) => DenseMatrix::scalar(val(a).as_slice().iter().map(|x| x * x).sum()),
            Op::Mse(a, t) => {
                let a = val(a);
                if a.shape() != t.shape() {
                    return Err(shape_err("mse", a, t));
                }
                let n = a.as_slice().len().max(1) as f64;
                DenseMatrix::scalar(a.as_slice().iter().zip(t.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let a = val(a);
                if labels.len() != a.rows() || labels.iter().any(|&l| l >= a.cols()) {
                    return Err(Error::ShapeMismatch { op: "softmax_cross_entropy", left: a.shape(), right: (labels.len(), 1) });
                }
                let total: f64 = (0..a.rows()).map(|i| log_sum_exp(a.row(i)) - a[(i, labels[i])]).sum();
                DenseMatrix::scalar(total / a.rows().max(1) as f64)
            }
        })
    }

    /// Backpropagates from a `1×1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::ShapeMismatch { op: "backward", left: self.value(loss).shape(), right: (1, 1) });
        }
        self.backward_from(loss, DenseMatrix::scalar(1.0))
    }

    /// Backpropagates a given adjoint `seed` of `output` (e.g. `∂loss/∂Y`).
    pub fn backward_from(&mut self, output: Var, seed: DenseMatrix) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::TapeEmpty);
        }
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err("backward", self.value(output), &seed));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        let mut inverse_matmuls = 0;
        for k in (0..=output.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            self.backprop_node(k, &g, &mut grads, &mut inverse_matmuls)?;
            grads[k] = Some(g);
        }
        if self.nodes.iter().any(|n| matches!(n.op, Op::Resolvent(_))) {
            self.last_inverse_matmuls = Some(inverse_matmuls);
        } else {
            self.last_inverse_matmuls = None;
        }
        Ok(Gradients { grads, inverse_matmuls })
    }

    /// `T×T` products executed by resolvent nodes in the latest backward
    /// pass (two per node).
    pub fn backward_matmul_count(&self) -> Result<usize> {
        if self.nodes.is_empty() {
            return Err(Error::TapeEmpty);
        }
        if !self.nodes.iter().any(|n| matches!(n.op, Op::Resolvent(_))) {
            return Err(Error::NoInverseNode);
        }
        Ok(self.last_inverse_matmuls.unwrap_or(0))
    }

    fn backprop_node(&self, k: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>], inverse_matmuls: &mut usize) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = &self.nodes[k].value;
        let mut acc = |v: Var, delta: DenseMatrix| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &self.nodes[k].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(b).transpose())?)?;
                acc(*b, val(a).transpose().matmul(g)?)?;
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                acc(*a, g.hadamard(val(b))?)?;
                acc(*b, g.hadamard(val(a))?)?;
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone())?;
                let sums = DenseMatrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g[(i, j)]).sum());
                acc(*r, sums)?;
            }
            Op::MulRows(a, s) => {
                let (av, sv) = (val(a), val(s));
                acc(*a, DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * sv[(i, 0)]))?;
                acc(*s, DenseMatrix::from_fn(g.rows(), 1, |i, _| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()))?;
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s))?,
            Op::MulConst(a, c) => acc(*a, g.hadamard(c)?)?,
            Op::IdentityPlus(a) => acc(*a, g.clone())?,
            Op::Transpose(a) => acc(*a, g.transpose())?,
            Op::Unary(a, f) => {
                let x = val(a);
                acc(*a, DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * f.derivative(x[(i, j)], out[(i, j)])))?;
            }
            Op::Conv(u, theta, nbrs) => {
                let (uv, th) = (val(u), val(theta));
                let (t0, t1) = (th[(0, 0)], th[(0, 1)]);
                let m = neighbor_mean(uv, nbrs);
                let mut gu = g.scale(t0);
                for (i, list) in nbrs.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let w = t1 / list.len() as f64;
                    for &j in list {
                        for c in 0..g.cols() {
                            gu[(j, c)] += w * g[(i, c)];
                        }
                    }
                }
                acc(*u, gu)?;
                let dot = |a: &DenseMatrix| a.as_slice().iter().zip(g.as_slice()).map(|(x, y)| x * y).sum::<f64>();
                acc(*theta, DenseMatrix::from_vec(1, 2, vec![dot(uv), dot(&m)])?)?;
            }
            Op::ColSlice(a, s, _) => {
                let av = val(a);
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                for i in 0..g.rows() {
                    ga.row_mut(i)[*s..*s + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, ga)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    acc(*p, g.slice_cols(offset, w))?;
                    offset += w;
                }
            }
            Op::ArcLogits { delta, delta_src, edge, layout } => {
                let divisor = if edge.is_some() { 3.0 } else { 2.0 };
                let n = layout.num_nodes;
                let mut gd = vec![0.0; n];
                let mut gs = vec![0.0; n];
                let mut ge = edge.map(|e| vec![0.0; val(&e).rows()]);
                for i in 0..n {
                    for a in layout.row(i) {
                        let ga = g[(a, 0)] / divisor;
                        gd[i] += ga;
                        gs[layout.src[a]] += ga;
                        if let Some(ge) = &mut ge {
                            ge[layout.edge[a]] += ga;
                        }
                    }
                }
                match delta_src {
                    Some(ds) => {
                        acc(*delta, col(&gd))?;
                        acc(*ds, col(&gs))?;
                    }
                    None => {
                        gd.iter_mut().zip(&gs).for_each(|(x, y)| *x += y);
                        acc(*delta, col(&gd))?;
                    }
                }
                if let (Some(e), Some(ge)) = (edge, ge) {
                    acc(*e, col(&ge))?;
                }
            }
            Op::RowNormalize { raw, psi, gamma, layout } => {
                let (r, p) = (val(raw).as_slice(), val(psi).as_slice());
                let mut gr = vec![0.0; r.len()];
                let mut gp = vec![0.0; p.len()];
                for i in 0..layout.num_nodes {
                    let range = layout.row(i);
                    let e = libm::exp(-p[i]);
                    let denom: f64 = r[range.clone()].iter().sum::<f64>() + e;
                    let go: f64 = range.clone().map(|a| g[(a, 0)] * out[(a, 0)]).sum();
                    for a in range {
                        gr[a] = (gamma * g[(a, 0)] - go) / denom;
                    }
                    gp[i] = go * e / denom;
                }
                acc(*raw, col(&gr))?;
                acc(*psi, col(&gp))?;
            }
            Op::LineRescale { raw, psi, pairs } => {
                let (r, p) = (val(raw).as_slice(), val(psi).as_slice());
                let mut gr: Vec<f64> = g.as_slice().to_vec();
                let mut gp = vec![0.0; p.len()];
                for &(a, b, i, j) in &pairs.pairs {
                    let budget = pair_budget(p, i, j);
                    let prod = r[a] * r[b];
                    if budget / prod.max(LINE_RESCALE_EPS) >= 1.0 {
                        continue;
                    }
                    // active: w_a = √(c·r_a/r_b), w_b = √(c·r_b/r_a)
                    let (wa, wb) = (out[(a, 0)], out[(b, 0)]);
                    let (ga, gb) = (g[(a, 0)], g[(b, 0)]);
                    gr[a] = ga * wa / (2.0 * r[a]) - gb * wb / (2.0 * r[a]);
                    gr[b] = gb * wb / (2.0 * r[b]) - ga * wa / (2.0 * r[b]);
                    let g_budget = (ga * wa + gb * wb) / (2.0 * budget);
                    let m = if p[i] >= p[j] { i } else { j };
                    let s = line_sigma(p[m]) * 4.0;
                    gp[m] += g_budget * (-0.25 * s * (1.0 - s));
                }
                acc(*raw, col(&gr))?;
                acc(*psi, col(&gp))?;
            }
            Op::DagInputScale { logits, layout, normalized } => {
                let mut gl = vec![0.0; val(logits).rows()];
                for i in 0..layout.num_nodes {
                    let range = layout.row(i);
                    let kappa = if *normalized { 1.0 / libm::sqrt(range.len() as f64) } else { 1.0 };
                    for a in range {
                        gl[a] = g[(i, 0)] * kappa;
                    }
                }
                acc(*logits, col(&gl))?;
            }
            Op::Densify { weights, layout } => {
                let mut gw = vec![0.0; val(weights).rows()];
                for i in 0..layout.num_nodes {
                    for a in layout.row(i) {
                        gw[a] = g[(i, layout.src[a])];
                    }
                }
                acc(*weights, col(&gw))?;
            }
            Op::Resolvent(a) => {
                // d(I-A)^-1 = L dA L  ⇒  Ā = Lᵀ Ḡ Lᵀ
                let lt = out.transpose();
                let ga = lt.matmul(g)?.matmul(&lt)?;
                *inverse_matmuls += 2;
                acc(*a, ga)?;
            }
            Op::Recurrence { weights, c, bbar, v, order, layout } => {
                let rg = recurrence_backward(order, layout, val(weights).as_slice(), val(c), val(bbar), val(v), g);
                acc(*weights, col(&rg.weights))?;
                acc(*c, rg.c)?;
                acc(*bbar, rg.bbar)?;
                acc(*v, rg.v)?;
            }
            Op::LayerNorm { x, scale, shift } => {
                let (xv, sv) = (val(x), val(scale));
                let d = xv.cols();
                let mut gx = DenseMatrix::zeros(xv.rows(), d);
                let mut gs = DenseMatrix::zeros(1, d);
                let mut gb = DenseMatrix::zeros(1, d);
                for i in 0..xv.rows() {
                    let (xh, inv) = normalize_row(xv.row(i));
                    let gh: Vec<f64> = (0..d).map(|j| g[(i, j)] * sv[(0, j)]).collect();
                    let mean_gh = gh.iter().sum::<f64>() / d as f64;
                    let mean_ghx = gh.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gs[(0, j)] += g[(i, j)] * xh[j];
                        gb[(0, j)] += g[(i, j)];
                        gx[(i, j)] = inv * (gh[j] - mean_gh - xh[j] * mean_ghx);
                    }
                }
                acc(*x, gx)?;
                acc(*scale, gs)?;
                acc(*shift, gb)?;
            }
            Op::SumSquares(a) => acc(*a, val(a).scale(2.0 * g[(0, 0)]))?,
            Op::Mse(a, t) => {
                let n = t.as_slice().len().max(1) as f64;
                acc(*a, val(a).sub(t)?.scale(2.0 * g[(0, 0)] / n))?;
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let av = val(a);
                let scale = g[(0, 0)] / av.rows().max(1) as f64;
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let lse = log_sum_exp(av.row(i));
                    for j in 0..av.cols() {
                        let p = libm::exp(av[(i, j)] - lse);
                        ga[(i, j)] = scale * (p - if j == labels[i] { 1.0 } else { 0.0 });
                    }
                }
                acc(*a, ga)?;
            }
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(row.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Standardized row and `1/σ`.
fn normalize_row(x: &[f64]) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
    (x.iter().map(|v| (v - mean) * inv).collect(), inv)
}

/// Central differences `(f(θ+ε) - f(θ-ε)) / 2ε` for every coordinate of
/// every tensor in `params`.
pub fn finite_difference_oracle<F>(mut f: F, params: &[DenseMatrix], eps: f64) -> Result<Vec<DenseMatrix>>
where
    F: FnMut(&[DenseMatrix]) -> Result<f64>,
{
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for t in 0..theta.len() {
        let mut g = DenseMatrix::zeros(theta[t].rows(), theta[t].cols());
        for k in 0..theta[t].as_slice().len() {
            let orig = theta[t].as_slice()[k];
            theta[t].as_mut_slice()[k] = orig + eps;
            let up = f(&theta)?;
            theta[t].as_mut_slice()[k] = orig - eps;
            let down = f(&theta)?;
            theta[t].as_mut_slice()[k] = orig;
            g.as_mut_slice()[k] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Finite differences of a recorded scalar `loss` with respect to every
/// registered parameter, by perturbing leaves and replaying.
pub fn tape_finite_differences(tape: &Tape, loss: Var, eps: f64) -> Result<BTreeMap<String, DenseMatrix>> {
    let mut work = tape.clone();
    let vars: Vec<Var> = tape.params.iter().map(|p| p.1).collect();
    let values: Vec<DenseMatrix> = vars.iter().map(|&v| tape.value(v).clone()).collect();
    let grads = finite_difference_oracle(
        |theta| {
            for (v, m) in vars.iter().zip(theta) {
                work.set_value(*v, m.clone())?;
            }
            work.replay()?;
            Ok(work.value(loss)[(0, 0)])
        },
        &values,
        eps,
    )?;
    Ok(tape.params.iter().map(|p| p.0.clone()).zip(grads).collect())
}

/// Largest `|a - b| / max(|a|, |b|)` over coordinates where either value
/// exceeds `floor` in magnitude.
pub fn max_relative_error(analytic: &BTreeMap<String, DenseMatrix>, numeric: &BTreeMap<String, DenseMatrix>, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, a) in analytic {
        let Some(b) = numeric.get(name) else { return f64::INFINITY };
        for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
            let scale = x.abs().max(y.abs());
            if scale > floor {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    worst
}

/// Topology data the recorded mixer needs, computed once per graph.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub graph: Graph,
    pub plan: Option<DagPlan>,
    pub regime: Regime,
    pub layout: Shared<ArcLayout>,
    pub neighbors: Shared<Vec<Vec<usize>>>,
    pub order: Option<Shared<Vec<usize>>>,
    pub line_pairs: Option<Shared<LinePairs>>,
    /// `1/√|p(dst)|` per arc.
    pub dag_arc_scale: Option<Shared<DenseMatrix>>,
    /// Truncation depth for squaring.
    pub depth: usize,
}

impl GraphContext {
    pub fn new(graph: &Graph, regime: Regime) -> Result<Self> {
        let plan = if regime.is_dag() { Some(plan_dag(graph)?) } else { None };
        Self::with_plan(graph, plan, regime)
    }

    pub fn with_plan(graph: &Graph, plan: Option<DagPlan>, regime: Regime) -> Result<Self> {
        if regime.is_dag() && plan.is_none() {
            return Err(Error::NotADag);
        }
        let layout = ArcLayout::of_graph(graph);
        let line_pairs = if regime == Regime::UndirectedLine {
            if !is_undirected_line(graph) {
                return Err(Error::NotALine);
            }
            Some(Shared::new(LinePairs::of_layout(&layout, graph)?))
        } else {
            None
        };
        let dag_arc_scale = (regime == Regime::DagNormalized).then(|| {
            let mut s = vec![0.0; layout.num_arcs()];
            for i in 0..layout.num_nodes {
                let range = layout.row(i);
                let k = 1.0 / libm::sqrt(range.len() as f64);
                s[range].iter_mut().for_each(|x| *x = k);
            }
            Shared::new(col(&s))
        });
        Ok(GraphContext {
            depth: default_depth(graph, plan.as_ref()),
            order: plan.as_ref().map(|p| Shared::new(p.topo_order().to_vec())),
            neighbors: Shared::new(graph.conv_neighbors()),
            graph: graph.clone(),
            plan,
            regime,
            layout: Shared::new(layout),
            line_pairs,
            dag_arc_scale,
        })
    }
}

/// Tape handles of one [`Projection`].
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub weight: Var,
    pub bias: Var,
    pub conv: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub b: ProjectionVars,
    pub c: ProjectionVars,
    pub delta: ProjectionVars,
    pub delta_src: Option<ProjectionVars>,
    pub psi: ProjectionVars,
    pub edge_delta: Option<ProjectionVars>,
}

/// Tape handles of a whole [`ProjectionWeights`], registered under the
/// same names as its [`NamedTensors`](crate::params::NamedTensors) view.
#[derive(Clone, Debug)]
pub struct MixerVars {
    pub v: ProjectionVars,
    pub heads: Vec<HeadVars>,
    pub head_width: usize,
}

fn register_projection(tape: &mut Tape, prefix: &str, p: &Projection) -> ProjectionVars {
    ProjectionVars {
        weight: tape.param(format!("{prefix}.weight"), p.weight.clone()),
        bias: tape.param(format!("{prefix}.bias"), p.bias.clone()),
        conv: p.conv.as_ref().map(|c| tape.param(format!("{prefix}.conv"), c.clone())),
    }
}

impl MixerVars {
    /// `prefix` is prepended (with a dot) to every parameter name when
    /// non-empty.
    pub fn register(tape: &mut Tape, prefix: &str, w: &ProjectionWeights) -> Self {
        let name = |s: &str| if prefix.is_empty() { String::from(s) } else { format!("{prefix}.{s}") };
        let v = register_projection(tape, &name("v"), &w.v);
        let heads = w
            .heads
            .iter()
            .enumerate()
            .map(|(h, hw)| HeadVars {
                b: register_projection(tape, &name(&format!("head{h}.b")), &hw.b),
                c: register_projection(tape, &name(&format!("head{h}.c")), &hw.c),
                delta: register_projection(tape, &name(&format!("head{h}.delta")), &hw.delta),
                delta_src: hw.delta_src.as_ref().map(|p| register_projection(tape, &name(&format!("head{h}.delta_src")), p)),
                psi: register_projection(tape, &name(&format!("head{h}.psi")), &hw.psi),
                edge_delta: hw.edge_delta.as_ref().map(|p| register_projection(tape, &name(&format!("head{h}.edge_delta")), p)),
            })
            .collect();
        MixerVars { v, heads, head_width: w.config.head_width() }
    }
}

fn record_projection(tape: &mut Tape, x: Var, p: &ProjectionVars, nbrs: Option<&Shared<Vec<Vec<usize>>>>, act: Option<Unary>) -> Result<Var> {
    let mut u = tape.matmul(x, p.weight)?;
    if let (Some(theta), Some(n)) = (p.conv, nbrs) {
        u = tape.conv(u, theta, n.clone())?;
    }
    u = tape.add_row(u, p.bias)?;
    match act {
        Some(f) => tape.unary(u, f),
        None => Ok(u),
    }
}

/// Tape handles of one head's SSM parameters.
#[derive(Clone, Copy, Debug)]
pub struct HeadParamVars {
    pub b: Var,
    pub c: Var,
    pub v: Var,
    pub delta: Var,
    pub delta_src: Option<Var>,
    pub psi: Var,
    pub edge_delta: Option<Var>,
}

pub fn record_params(tape: &mut Tape, ctx: &GraphContext, x: Var, edge_x: Option<Var>, w: &MixerVars) -> Result<Vec<HeadParamVars>> {
    let nbrs = Some(&ctx.neighbors);
    let v_all = record_projection(tape, x, &w.v, nbrs, Some(Unary::Swish))?;
    let mut out = Vec::with_capacity(w.heads.len());
    for (h, head) in w.heads.iter().enumerate() {
        let edge_delta = match (&head.edge_delta, edge_x) {
            (Some(p), Some(z)) => Some(record_projection(tape, z, p, None, Some(Unary::Softplus))?),
            (Some(_), None) => return Err(Error::MissingFeatures { what: "edge features" }),
            (None, _) => None,
        };
        let delta_src = match &head.delta_src {
            Some(p) => Some(record_projection(tape, x, p, nbrs, Some(Unary::Softplus))?),
            None => None,
        };
        out.push(HeadParamVars {
            b: record_projection(tape, x, &head.b, nbrs, Some(Unary::Swish))?,
            c: record_projection(tape, x, &head.c, nbrs, Some(Unary::Swish))?,
            v: tape.col_slice(v_all, h * w.head_width, w.head_width)?,
            delta: record_projection(tape, x, &head.delta, nbrs, Some(Unary::Softplus))?,
            delta_src,
            psi: record_projection(tape, x, &head.psi, nbrs, None)?,
            edge_delta,
        });
    }
    Ok(out)
}

/// Records adjacency, mask and mixing for one head; returns `Y_h`.
pub fn record_head(tape: &mut Tape, ctx: &GraphContext, p: &HeadParamVars, cfg: &MixConfig) -> Result<Var> {
    cfg.algorithm.check(cfg.regime)?;
    if cfg.regime != ctx.regime {
        return Err(Error::InvalidConfig(format!(
            "graph context prepared for regime {} but {} requested",
            ctx.regime.token(),
            cfg.regime.token()
        )));
    }
    let layout = ctx.layout.clone();
    let logits = tape.arc_logits(p.delta, p.delta_src, p.edge_delta, layout.clone())?;
    let raw = tape.unary(logits, Unary::ExpNeg)?;
    let (weights, bbar) = match cfg.regime {
        Regime::General => {
            if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
                return Err(Error::GammaOutOfRange { gamma: cfg.gamma });
            }
            (tape.row_normalize(raw, p.psi, cfg.gamma, layout.clone())?, p.b)
        }
        Regime::Dag | Regime::DagNormalized => {
            let normalized = cfg.regime == Regime::DagNormalized;
            let w = match &ctx.dag_arc_scale {
                Some(s) if normalized => tape.mul_const(raw, s.clone())?,
                _ => raw,
            };
            let scale = tape.dag_input_scale(logits, layout.clone(), normalized)?;
            (w, tape.mul_rows(p.b, scale)?)
        }
        Regime::UndirectedLine => {
            let pairs = ctx.line_pairs.clone().ok_or(Error::NotALine)?;
            (tape.line_rescale(raw, p.psi, pairs)?, p.b)
        }
    };
    if cfg.algorithm == Algorithm::Recurrence {
        let order = ctx.order.clone().ok_or(Error::NotADag)?;
        return tape.recurrence(weights, p.c, bbar, p.v, order, layout);
    }
    let n = ctx.graph.num_nodes();
    if n > cfg.dense_cap && cfg.algorithm != Algorithm::Squaring {
        return Err(Error::DenseCapExceeded { num_nodes: n, cap: cfg.dense_cap });
    }
    let a = tape.densify(weights, layout)?;
    let l = match cfg.algorithm {
        Algorithm::Dense => tape.resolvent(a)?,
        Algorithm::Squaring => {
            let target = squaring_power(ctx.depth);
            let mut acc = tape.identity_plus(a)?;
            let mut power = a;
            let mut reached = 1;
            while reached < target {
                power = tape.matmul(power, power)?;
                let factor = tape.identity_plus(power)?;
                acc = tape.matmul(acc, factor)?;
                reached *= 2;
            }
            acc
        }
        Algorithm::Neumann(k) => {
            let mut l = tape.constant(DenseMatrix::identity(n));
            for _ in 0..k {
                let al = tape.matmul(a, l)?;
                l = tape.identity_plus(al)?;
            }
            l
        }
        Algorithm::Recurrence => unreachable!(),
    };
    let bt = tape.transpose(bbar)?;
    let cb = tape.matmul(p.c, bt)?;
    let m = tape.hadamard(l, cb)?;
    tape.matmul(m, p.v)
}

/// Records the full mixer on one topology; returns `Y` (`T×D`).
pub fn record_mixer(tape: &mut Tape, ctx: &GraphContext, x: Var, edge_x: Option<Var>, w: &MixerVars, cfg: &MixConfig) -> Result<Var> {
    let params = record_params(tape, ctx, x, edge_x, w)?;
    let heads = params.iter().map(|p| record_head(tape, ctx, p, cfg)).collect::<Result<Vec<_>>>()?;
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        tape.concat_cols(heads)
    }
}

/// Records every part of a decomposition and combines them.
pub fn record_decomposed(
    tape: &mut Tape,
    parts: &[GraphContext],
    x: Var,
    edge_x: &[Option<Var>],
    weights: &[MixerVars],
    assignment: &[usize],
    cfg: &MixConfig,
) -> Result<Var> {
    if parts.is_empty() || assignment.len() != parts.len() || edge_x.len() != parts.len() {
        return Err(Error::InvalidConfig(format!("{} parts with {} assignments", parts.len(), assignment.len())));
    }
    let mut total: Option<Var> = None;
    for (k, ctx) in parts.iter().enumerate() {
        let w = weights.get(assignment[k]).ok_or_else(|| Error::InvalidConfig(format!("no weight set {}", assignment[k])))?;
        let y = record_mixer(tape, ctx, x, edge_x[k], w, cfg)?;
        total = Some(match total {
            None => y,
            Some(acc) => tape.add(acc, y)?,
        });
    }
    let y = total.expect("non-empty");
    match cfg.combine {
        Combine::Sum => Ok(y),
        Combine::Mean => tape.scale(y, 1.0 / parts.len() as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::line_graph;
    use crate::params::{ProjectionConfig, WeightedAdjacency};
    use crate::resolvent::{chimera_forward, mask_dense, mix_output};
    use crate::rng::SeededRng;

    #[test]
    fn quadratic_oracle() {
        let theta = DenseMatrix::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let g = finite_difference_oracle(|t| Ok(t[0].as_slice().iter().map(|x| x * x).sum()), core::slice::from_ref(&theta), 1e-5).unwrap();
        assert!(g[0].max_abs_diff(&theta.scale(2.0)) < 1e-9);
        let lin = finite_difference_oracle(|t| Ok(3.0 * t[0][(0, 0)] - t[0][(0, 1)]), &[theta], 1e-5).unwrap();
        assert!((lin[0][(0, 0)] - 3.0).abs() < 1e-9 && (lin[0][(0, 2)]).abs() < 1e-12);
    }

    #[test]
    fn empty_tape_and_no_inverse() {
        let mut t = Tape::new();
        assert_eq!(t.backward_matmul_count(), Err(Error::TapeEmpty));
        let x = t.param("x", DenseMatrix::scalar(2.0));
        let s = t.sum_squares(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.backward_matmul_count(), Err(Error::NoInverseNode));
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut t = Tape::new();
        let x = t.param("x", DenseMatrix::scalar(2.0));
        let _unused = t.param("unused", DenseMatrix::scalar(5.0));
        let s = t.sum_squares(x).unwrap();
        let g = t.backward(s).unwrap().params(&t);
        assert_eq!(g["x"][(0, 0)], 4.0);
        assert_eq!(g["unused"][(0, 0)], 0.0);
    }

    #[test]
    fn single_edge_hand_derivative() {
        // y₁ = C₁(B̄₁v₁ + A₁₀ B̄₀v₀)  ⇒  ∂y₁/∂A₁₀ = C₁ B̄₀ v₀
        let mut t = Tape::new();
        let a = t.param("a", DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.6, 0.0]]).unwrap());
        let (c, b, v) = (DenseMatrix::column(&[1.5, -0.7]), DenseMatrix::column(&[2.0, 0.3]), DenseMatrix::column(&[0.4, 1.1]));
        let l = t.resolvent(a).unwrap();
        let (cv, bv, vv) = (t.constant(c.clone()), t.constant(b.clone()), t.constant(v.clone()));
        let bt = t.transpose(bv).unwrap();
        let cb = t.matmul(cv, bt).unwrap();
        let m = t.hadamard(l, cb).unwrap();
        let y = t.matmul(m, vv).unwrap();
        let seed = DenseMatrix::column(&[0.0, 1.0]);
        let g = t.backward_from(y, seed).unwrap();
        assert!((g.wrt(&t, a)[(1, 0)] - c[(1, 0)] * b[(0, 0)] * v[(0, 0)]).abs() < 1e-14);
        assert_eq!(t.backward_matmul_count().unwrap(), 2);
    }

    fn random_dag(rng: &mut SeededRng, t: usize, p: f64) -> Graph {
        let mut edges = Vec::new();
        for i in 0..t {
            for j in 0..i {
                if rng.bernoulli(p) {
                    edges.push((j, i));
                }
            }
        }
        Graph::new(t, true, &edges).unwrap()
    }

    #[test]
    fn recorded_mixer_matches_plain_forward() {
        let mut rng = SeededRng::new(5);
        let g = random_dag(&mut rng, 9, 0.3);
        let x = rng.gaussian_matrix(9, 4, 1.0);
        let cfg_w = ProjectionConfig { heads: 2, ..ProjectionConfig::new(4, 3) };
        let w = ProjectionWeights::init(cfg_w, &mut rng).unwrap();
        for regime in [Regime::General, Regime::Dag, Regime::DagNormalized] {
            for algorithm in [Algorithm::Dense, Algorithm::Squaring, Algorithm::Neumann(12), Algorithm::Recurrence] {
                if !algorithm.supports(regime) {
                    continue;
                }
                let cfg = MixConfig::new(regime, algorithm);
                let plain = chimera_forward(&g, &x, None, &w, &cfg).unwrap().y;
                let ctx = GraphContext::new(&g, regime).unwrap();
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let vars = MixerVars::register(&mut tape, "", &w);
                let y = record_mixer(&mut tape, &ctx, xv, None, &vars, &cfg).unwrap();
                assert!(tape.value(y).max_abs_diff(&plain) < 1e-12, "{regime:?} {algorithm:?}");
                assert!(tape.replay_matches().unwrap());
            }
        }
    }

    #[test]
    fn mixer_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(9);
        let g = random_dag(&mut rng, 6, 0.4);
        let x = rng.gaussian_matrix(6, 2, 1.0);
        let w = ProjectionWeights::init(ProjectionConfig::new(2, 2), &mut rng).unwrap();
        for (regime, algorithm) in [(Regime::Dag, Algorithm::Recurrence), (Regime::General, Algorithm::Dense), (Regime::DagNormalized, Algorithm::Squaring)] {
            let cfg = MixConfig::new(regime, algorithm);
            let ctx = GraphContext::new(&g, regime).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let vars = MixerVars::register(&mut tape, "", &w);
            let y = record_mixer(&mut tape, &ctx, xv, None, &vars, &cfg).unwrap();
            let loss = tape.sum_squares(y).unwrap();
            let analytic = tape.backward(loss).unwrap().params(&tape);
            let numeric = tape_finite_differences(&tape, loss, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric, 1e-8);
            assert!(err < 1e-5, "{regime:?}/{algorithm:?}: {err}");
        }
    }

    #[test]
    fn line_rescale_gradient() {
        let g = line_graph(4, false).unwrap();
        let ctx = GraphContext::new(&g, Regime::UndirectedLine).unwrap();
        let mut tape = Tape::new();
        let raw = tape.param("raw", DenseMatrix::column(&[0.9, 0.8, 0.2, 0.3, 0.95, 0.7]));
        let psi = tape.param("psi", DenseMatrix::column(&[0.1, -0.4, 1.3, 0.2]));
        let w = tape.line_rescale(raw, psi, ctx.line_pairs.clone().unwrap()).unwrap();
        let k = tape.constant(DenseMatrix::column(&[1.0, -2.0, 0.5, 3.0, 1.5, -1.0]));
        let h = tape.hadamard(w, k).unwrap();
        let loss = tape.sum_squares(h).unwrap();
        let analytic = tape.backward(loss).unwrap().params(&tape);
        let numeric = tape_finite_differences(&tape, loss, 1e-6).unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-6);
    }

    #[test]
    fn resolvent_node_agrees_with_mask() {
        let adj = WeightedAdjacency::from_weights(3, &[(1, 0, 0.3), (2, 1, 0.2), (0, 2, 0.1)], Regime::General, None).unwrap();
        let mut tape = Tape::new();
        let a = tape.param("a", adj.to_dense());
        let l = tape.resolvent(a).unwrap();
        let mask = mask_dense(&adj).unwrap();
        assert_eq!(tape.value(l), &mask.l);
        let ones = DenseMatrix::filled(3, 1, 1.0);
        let y = mix_output(&mask, &ones, &ones, &ones).unwrap().y;
        let expect = DenseMatrix::from_fn(3, 1, |i, _| mask.l.row(i).iter().sum());
        assert!(y.max_abs_diff(&expect) < 1e-15);
    }
}
