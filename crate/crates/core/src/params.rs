//! Data-dependent SSM parameters and the weighted adjacency built from them.
//!
//! Every projection follows the same pipeline: a linear map of the node
//! features, a one-hop mean graph convolution with two learned mixing
//! scalars, then an activation (Swish for `B`, `C`, `V`; softplus for the
//! selectivities `Δ`, `Δ'`; identity for the normalizer `Ψ`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Arc, DagPlan, Graph};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

/// Guard for the undirected-line rescale denominator.
pub const LINE_RESCALE_EPS: f64 = 1e-12;
/// Default general-regime scale.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activation {
    Identity,
    Swish,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Swish => swish(x),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Swish => swish_grad(x),
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// How the adjacency is parameterized and normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Row-wise `Ψ` normalization scaled by `γ`; any topology.
    General,
    /// `A_ij = exp(-Δ_ij)` on a DAG.
    Dag,
    /// DAG weights scaled by `1/√|p(i)|`.
    DagNormalized,
    /// Pairwise cycle-product constraint on an undirected chain.
    UndirectedLine,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::General, Regime::Dag, Regime::DagNormalized, Regime::UndirectedLine];

    pub fn token(self) -> &'static str {
        match self {
            Regime::General => "general",
            Regime::Dag => "dag",
            Regime::DagNormalized => "dag-normalized",
            Regime::UndirectedLine => "undirected-line",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.token() == token)
            .ok_or_else(|| Error::InvalidConfig(format!(
                "unknown regime `{token}` (expected one of: general, dag, dag-normalized, undirected-line)"
            )))
    }

    pub fn is_dag(self) -> bool {
        matches!(self, Regime::Dag | Regime::DagNormalized)
    }
}

/// Anything exposing its trainable tensors by stable name.
///
/// Both methods must list the same names in the same order.
pub trait NamedTensors {
    fn tensors(&self) -> Vec<(String, &DenseMatrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.rows() * t.cols()).sum()
    }
}

/// Linear map + graph convolution (+ activation chosen by the caller).
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `in × out`.
    pub weight: DenseMatrix,
    /// `1 × out`, added after the convolution.
    pub bias: DenseMatrix,
    /// `1 × 2`: `[θ_self, θ_neigh]`; absent for edge projections.
    pub conv: Option<DenseMatrix>,
}

impl Projection {
    fn init(rng: &mut SeededRng, input: usize, output: usize, conv: bool) -> Self {
        let std = 1.0 / libm::sqrt(input.max(1) as f64);
        Projection {
            weight: rng.gaussian_matrix(input, output, std),
            bias: DenseMatrix::zeros(1, output),
            conv: conv.then(|| DenseMatrix::from_vec(1, 2, vec![1.0, 0.5]).expect("finite")),
        }
    }

    fn zeros(input: usize, output: usize, conv: bool) -> Self {
        Projection {
            weight: DenseMatrix::zeros(input, output),
            bias: DenseMatrix::zeros(1, output),
            conv: conv.then(|| DenseMatrix::zeros(1, 2)),
        }
    }

    pub fn theta(&self) -> (f64, f64) {
        self.conv.as_ref().map_or((1.0, 0.0), |c| (c.as_slice()[0], c.as_slice()[1]))
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseMatrix)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
        if let Some(c) = &self.conv {
            out.push((format!("{prefix}.conv"), c));
        }
    }

    fn push_tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseMatrix)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
        if let Some(c) = &mut self.conv {
            out.push((format!("{prefix}.conv"), c));
        }
    }

    /// `activation(θ_s·XW + θ_n·mean_N(XW) + bias)`, also returning the
    /// pre-activation values.
    pub fn forward(&self, x: &DenseMatrix, neighbors: Option<&[Vec<usize>]>, act: Activation) -> Result<DenseMatrix> {
        let u = x.matmul(&self.weight)?;
        let mixed = match (neighbors, &self.conv) {
            (Some(nbrs), Some(_)) => {
                let (ts, tn) = self.theta();
                let mean = neighbor_mean(&u, nbrs);
                DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| ts * u[(i, j)] + tn * mean[(i, j)])
            }
            _ => u,
        };
        let bias = self.bias.row(0);
        Ok(DenseMatrix::from_fn(mixed.rows(), mixed.cols(), |i, j| act.apply(mixed[(i, j)] + bias[j])))
    }
}

/// Row `i` is the mean of rows `nbrs[i]`; zero when the neighborhood is empty.
pub fn neighbor_mean(u: &DenseMatrix, nbrs: &[Vec<usize>]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(u.rows(), u.cols());
    for (i, list) in nbrs.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let inv = 1.0 / list.len() as f64;
        let row = out.row_mut(i);
        for &j in list {
            for (o, &v) in row.iter_mut().zip(u.row(j)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Per-head projections. Each head owns its `B`, `C`, `Δ`, `Ψ` (and edge
/// selectivity), so each head has its own adjacency and mask.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub b: Projection,
    pub c: Projection,
    pub delta: Projection,
    /// Second selectivity head for the source end of an arc.
    pub delta_src: Option<Projection>,
    pub psi: Projection,
    pub edge_delta: Option<Projection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectionConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub heads: usize,
    pub edge_dim: Option<usize>,
    pub directed_variant: bool,
}

impl ProjectionConfig {
    pub fn new(d_model: usize, d_state: usize) -> Self {
        ProjectionConfig { d_model, d_state, heads: 1, edge_dim: None, directed_variant: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig("d_model, d_state and heads must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }
}

/// All projections `f_B, f_C, f_V, f_Δ, f_Ψ, f_Δ'` of one mixer.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionWeights {
    pub config: ProjectionConfig,
    /// `D×D`, shared by all heads and split by columns.
    pub v: Projection,
    pub heads: Vec<HeadWeights>,
}

impl ProjectionWeights {
    /// Gaussian weights with std `1/√fan_in`, zero biases, conv `[1, 0.5]`.
    pub fn init(config: ProjectionConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (dm, ds) = (config.d_model, config.d_state);
        let heads = (0..config.heads)
            .map(|_| HeadWeights {
                b: Projection::init(rng, dm, ds, true),
                c: Projection::init(rng, dm, ds, true),
                delta: Projection::init(rng, dm, 1, true),
                delta_src: config.directed_variant.then(|| Projection::init(rng, dm, 1, true)),
                psi: Projection::init(rng, dm, 1, true),
                edge_delta: config.edge_dim.map(|de| Projection::init(rng, de, 1, false)),
            })
            .collect();
        Ok(ProjectionWeights { config, v: Projection::init(rng, dm, dm, true), heads })
    }

    /// Every weight, bias and mixing scalar zero.
    pub fn zeros(config: ProjectionConfig) -> Result<Self> {
        config.validate()?;
        let (dm, ds) = (config.d_model, config.d_state);
        let heads = (0..config.heads)
            .map(|_| HeadWeights {
                b: Projection::zeros(dm, ds, true),
                c: Projection::zeros(dm, ds, true),
                delta: Projection::zeros(dm, 1, true),
                delta_src: config.directed_variant.then(|| Projection::zeros(dm, 1, true)),
                psi: Projection::zeros(dm, 1, true),
                edge_delta: config.edge_dim.map(|de| Projection::zeros(de, 1, false)),
            })
            .collect();
        Ok(ProjectionWeights { config, v: Projection::zeros(dm, dm, true), heads })
    }
}

impl NamedTensors for ProjectionWeights {
    fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        self.v.push_tensors("v", &mut out);
        for (h, head) in self.heads.iter().enumerate() {
            head.b.push_tensors(&format!("head{h}.b"), &mut out);
            head.c.push_tensors(&format!("head{h}.c"), &mut out);
            head.delta.push_tensors(&format!("head{h}.delta"), &mut out);
            if let Some(p) = &head.delta_src {
                p.push_tensors(&format!("head{h}.delta_src"), &mut out);
            }
            head.psi.push_tensors(&format!("head{h}.psi"), &mut out);
            if let Some(p) = &head.edge_delta {
                p.push_tensors(&format!("head{h}.edge_delta"), &mut out);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = Vec::new();
        self.v.push_tensors_mut("v", &mut out);
        for (h, head) in self.heads.iter_mut().enumerate() {
            head.b.push_tensors_mut(&format!("head{h}.b"), &mut out);
            head.c.push_tensors_mut(&format!("head{h}.c"), &mut out);
            head.delta.push_tensors_mut(&format!("head{h}.delta"), &mut out);
            if let Some(p) = &mut head.delta_src {
                p.push_tensors_mut(&format!("head{h}.delta_src"), &mut out);
            }
            head.psi.push_tensors_mut(&format!("head{h}.psi"), &mut out);
            if let Some(p) = &mut head.edge_delta {
                p.push_tensors_mut(&format!("head{h}.edge_delta"), &mut out);
            }
        }
        out
    }
}

/// One head's worth of SSM parameters over a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// `T×d`
    pub b: DenseMatrix,
    /// `T×d`
    pub c: DenseMatrix,
    /// `T×D_head` — this head's slice of the value channels.
    pub v: DenseMatrix,
    /// Node selectivity, `≥ 0`.
    pub delta: Vec<f64>,
    /// Source-end selectivity for the two-`Δ` variant.
    pub delta_src: Option<Vec<f64>>,
    pub psi: Vec<f64>,
    /// Edge selectivity, one per stored graph edge, `≥ 0`.
    pub edge_delta: Option<Vec<f64>>,
}

fn column_values(m: &DenseMatrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Runs every projection over the graph's own node (and edge) features.
pub fn compute_params(graph: &Graph, weights: &ProjectionWeights) -> Result<Vec<SsmParams>> {
    let x = graph.node_features().ok_or(Error::MissingFeatures { what: "node features" })?;
    compute_params_with(graph, x, graph.edge_features(), weights)
}

/// Runs every projection over explicit features `x` (`T×D`) and optional
/// edge features (`|E|×D_e`). Returns one [`SsmParams`] per head.
pub fn compute_params_with(
    graph: &Graph,
    x: &DenseMatrix,
    edge_x: Option<&DenseMatrix>,
    weights: &ProjectionWeights,
) -> Result<Vec<SsmParams>> {
    let cfg = weights.config;
    if x.rows() != graph.num_nodes() || x.cols() != cfg.d_model {
        return Err(Error::ShapeMismatch {
            op: "compute_params",
            left: (graph.num_nodes(), cfg.d_model),
            right: x.shape(),
        });
    }
    let edge_x = match (cfg.edge_dim, edge_x) {
        (Some(de), Some(z)) => {
            if z.rows() != graph.num_edges() || z.cols() != de {
                return Err(Error::ShapeMismatch {
                    op: "compute_params",
                    left: (graph.num_edges(), de),
                    right: z.shape(),
                });
            }
            Some(z)
        }
        (Some(_), None) => return Err(Error::MissingFeatures { what: "edge features" }),
        (None, _) => None,
    };
    let nbrs = graph.conv_neighbors();
    let nbrs = Some(nbrs.as_slice());
    let v_all = weights.v.forward(x, nbrs, Activation::Swish)?;
    let width = cfg.head_width();
    weights
        .heads
        .iter()
        .enumerate()
        .map(|(h, head)| {
            let edge_delta = match (&head.edge_delta, edge_x) {
                (Some(p), Some(z)) => Some(column_values(&p.forward(z, None, Activation::Softplus)?)),
                _ => None,
            };
            let delta_src = match &head.delta_src {
                Some(p) => Some(column_values(&p.forward(x, nbrs, Activation::Softplus)?)),
                None => None,
            };
            Ok(SsmParams {
                b: head.b.forward(x, nbrs, Activation::Swish)?,
                c: head.c.forward(x, nbrs, Activation::Swish)?,
                v: v_all.slice_cols(h * width, width),
                delta: column_values(&head.delta.forward(x, nbrs, Activation::Softplus)?),
                delta_src,
                psi: column_values(&head.psi.forward(x, nbrs, Activation::Identity)?),
                edge_delta,
            })
        })
        .collect()
}

/// Arcs in CSR order by destination.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcLayout {
    pub num_nodes: usize,
    /// `row_ptr[i]..row_ptr[i+1]` are the arcs into node `i`.
    pub row_ptr: Vec<usize>,
    pub src: Vec<usize>,
    pub edge: Vec<usize>,
}

impl ArcLayout {
    pub fn from_arcs(num_nodes: usize, arcs: &[Arc]) -> Self {
        let mut sorted = arcs.to_vec();
        sorted.sort_unstable();
        let mut row_ptr = vec![0; num_nodes + 1];
        for a in &sorted {
            row_ptr[a.dst + 1] += 1;
        }
        for i in 0..num_nodes {
            row_ptr[i + 1] += row_ptr[i];
        }
        ArcLayout {
            num_nodes,
            row_ptr,
            src: sorted.iter().map(|a| a.src).collect(),
            edge: sorted.iter().map(|a| a.edge).collect(),
        }
    }

    pub fn of_graph(graph: &Graph) -> Self {
        Self::from_arcs(graph.num_nodes(), &graph.arcs())
    }

    pub fn num_arcs(&self) -> usize {
        self.src.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> core::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Destination of every arc.
    pub fn dst(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.num_arcs());
        for i in 0..self.num_nodes {
            d.extend(self.row(i).map(|_| i));
        }
        d
    }

    /// Index of the arc `dst ← src`, if present.
    pub fn find(&self, dst: usize, src: usize) -> Option<usize> {
        self.row(dst).find(|&a| self.src[a] == src)
    }
}

/// Normalized weighted adjacency, stored sparsely by destination row.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedAdjacency {
    pub layout: ArcLayout,
    /// `A[dst][src]` per arc.
    pub weights: Vec<f64>,
    pub regime: Regime,
    /// `γ` for the general regime.
    pub gamma: Option<f64>,
    /// Acyclicity certificate for DAG regimes.
    pub plan: Option<DagPlan>,
}

impl WeightedAdjacency {
    /// Wraps externally supplied arc weights (`(dst, src, weight)` triples).
    pub fn from_weights(num_nodes: usize, arcs: &[(usize, usize, f64)], regime: Regime, plan: Option<DagPlan>) -> Result<Self> {
        let mut list: Vec<(Arc, f64)> = Vec::with_capacity(arcs.len());
        for (k, &(dst, src, w)) in arcs.iter().enumerate() {
            if dst >= num_nodes || src >= num_nodes {
                return Err(Error::IndexOutOfRange { node: dst.max(src), num_nodes });
            }
            list.push((Arc { dst, src, edge: k }, w));
        }
        list.sort_by_key(|p| p.0);
        let arcs: Vec<Arc> = list.iter().map(|p| p.0).collect();
        Ok(WeightedAdjacency {
            layout: ArcLayout::from_arcs(num_nodes, &arcs),
            weights: list.iter().map(|p| p.1).collect(),
            regime,
            gamma: None,
            plan,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.layout.num_nodes
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.num_nodes();
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for k in self.layout.row(i) {
                a[(i, self.layout.src[k])] += self.weights[k];
            }
        }
        a
    }

    pub fn max_row_abs_sum(&self) -> f64 {
        (0..self.num_nodes())
            .map(|i| self.layout.row(i).map(|k| self.weights[k].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn weight(&self, dst: usize, src: usize) -> f64 {
        self.layout.find(dst, src).map_or(0.0, |k| self.weights[k])
    }
}

/// `Δ_ij` per arc: the mean of the destination selectivity, the source
/// selectivity (second head when present) and the edge selectivity (when
/// present).
pub fn arc_logits(layout: &ArcLayout, params: &SsmParams) -> Vec<f64> {
    let src_delta = params.delta_src.as_deref().unwrap_or(&params.delta);
    let divisor = if params.edge_delta.is_some() { 3.0 } else { 2.0 };
    let mut out = Vec::with_capacity(layout.num_arcs());
    for i in 0..layout.num_nodes {
        for k in layout.row(i) {
            let mut s = params.delta[i] + src_delta[layout.src[k]];
            if let Some(ed) = &params.edge_delta {
                s += ed[layout.edge[k]];
            }
            out.push(s / divisor);
        }
    }
    out
}

/// `A[i,:] ← γ A[i,:] / (Σ_j A_ij + exp(-Ψ_i))`.
pub fn row_normalize(layout: &ArcLayout, raw: &[f64], psi: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for i in 0..layout.num_nodes {
        let range = layout.row(i);
        let denom: f64 = raw[range.clone()].iter().sum::<f64>() + libm::exp(-psi[i]);
        for k in range {
            out[k] = gamma * raw[k] / denom;
        }
    }
    out
}

/// Arc pairs `(i→j, j→i)` of an undirected chain with their endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct LinePairs {
    /// `(arc a_ij, arc a_ji, i, j)`
    pub pairs: Vec<(usize, usize, usize, usize)>,
}

impl LinePairs {
    pub fn of_layout(layout: &ArcLayout, graph: &Graph) -> Result<Self> {
        let pairs = graph
            .edges()
            .iter()
            .map(|&(i, j)| {
                let a = layout.find(i, j).ok_or(Error::NotALine)?;
                let b = layout.find(j, i).ok_or(Error::NotALine)?;
                Ok((a, b, i, j))
            })
            .collect::<Result<_>>()?;
        Ok(LinePairs { pairs })
    }
}

/// `σ(Ψ) = sigmoid(Ψ)/4 ∈ (0, 1/4)`.
#[inline]
pub fn line_sigma(psi: f64) -> f64 {
    0.25 * sigmoid(psi)
}

/// Budget `1/4 - σ(max(Ψ_i, Ψ_j))` for one adjacent pair; using the larger
/// endpoint makes the constraint hold for both endpoints.
#[inline]
pub fn pair_budget(psi: &[f64], i: usize, j: usize) -> f64 {
    0.25 - line_sigma(psi[i].max(psi[j]))
}

/// Rescales each pair so `A_ij·A_ji ≤ 1/4 - σ(Ψ)`; pairs already inside the
/// budget are left unchanged.
pub fn line_rescale(pairs: &LinePairs, raw: &[f64], psi: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    for &(a, b, i, j) in &pairs.pairs {
        let budget = pair_budget(psi, i, j);
        let s = (budget / (raw[a] * raw[b]).max(LINE_RESCALE_EPS)).min(1.0);
        let mut r = libm::sqrt(s);
        // An active rescale lands on the boundary; step down past rounding.
        if s < 1.0 {
            let sigma = line_sigma(psi[i].max(psi[j]));
            while (raw[a] * r) * (raw[b] * r) + sigma > 0.25 {
                r = r.next_down();
            }
        }
        out[a] = raw[a] * r;
        out[b] = raw[b] * r;
    }
    out
}

fn exp_neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&s| libm::exp(-s)).collect()
}

/// General regime: raw `exp(-Δ_ij)` per arc, then row normalization.
pub fn build_adjacency_general(graph: &Graph, params: &SsmParams, gamma: f64) -> Result<WeightedAdjacency> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange { gamma });
    }
    let layout = ArcLayout::of_graph(graph);
    let raw = exp_neg(&arc_logits(&layout, params));
    let weights = row_normalize(&layout, &raw, &params.psi, gamma);
    Ok(WeightedAdjacency { layout, weights, regime: Regime::General, gamma: Some(gamma), plan: None })
}

/// Per-node multiplier of `B_i` in the DAG regimes: `Σ_{j∈p(i)} Δ_ij`
/// (divided by `√|p(i)|` when normalized); roots inject `B_i` unchanged.
pub fn dag_input_scale(layout: &ArcLayout, logits: &[f64], normalized: bool) -> Vec<f64> {
    (0..layout.num_nodes)
        .map(|i| {
            let range = layout.row(i);
            if range.is_empty() {
                return 1.0;
            }
            let sum: f64 = logits[range.clone()].iter().sum();
            if normalized {
                sum / libm::sqrt(range.len() as f64)
            } else {
                sum
            }
        })
        .collect()
}

/// DAG regimes. Returns the adjacency and `B̄`.
pub fn build_adjacency_dag(graph: &Graph, plan: &DagPlan, params: &SsmParams, normalized: bool) -> Result<(WeightedAdjacency, DenseMatrix)> {
    if !graph.is_directed() || plan.num_nodes() != graph.num_nodes() || plan.num_edges() != graph.num_edges() {
        return Err(Error::NotADag);
    }
    let layout = ArcLayout::of_graph(graph);
    let logits = arc_logits(&layout, params);
    let mut weights = exp_neg(&logits);
    if normalized {
        for i in 0..layout.num_nodes {
            let range = layout.row(i);
            let scale = 1.0 / libm::sqrt(range.len().max(1) as f64);
            weights[range].iter_mut().for_each(|w| *w *= scale);
        }
    }
    let scale = dag_input_scale(&layout, &logits, normalized);
    let bbar = scale_rows(&params.b, &scale);
    let regime = if normalized { Regime::DagNormalized } else { Regime::Dag };
    Ok((WeightedAdjacency { layout, weights, regime, gamma: None, plan: Some(plan.clone()) }, bbar))
}

/// Checks that `graph` is the undirected chain `0 - 1 - … - (T-1)`.
pub fn is_undirected_line(graph: &Graph) -> bool {
    !graph.is_directed()
        && graph.num_edges() + 1 == graph.num_nodes()
        && graph.edges().iter().all(|&(a, b)| b == a + 1)
}

/// Undirected chain with the pairwise cycle-product constraint.
pub fn build_adjacency_undirected_line(graph: &Graph, params: &SsmParams) -> Result<WeightedAdjacency> {
    if !is_undirected_line(graph) {
        return Err(Error::NotALine);
    }
    let layout = ArcLayout::of_graph(graph);
    let raw = exp_neg(&arc_logits(&layout, params));
    let pairs = LinePairs::of_layout(&layout, graph)?;
    let weights = line_rescale(&pairs, &raw, &params.psi);
    Ok(WeightedAdjacency { layout, weights, regime: Regime::UndirectedLine, gamma: None, plan: None })
}

/// `out[i][:] = m[i][:] * s[i]`.
pub fn scale_rows(m: &DenseMatrix, s: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * s[i])
}

/// Builds the adjacency for any regime, with `B̄` (`B̄ = B` outside the DAG
/// regimes).
pub fn build_adjacency(
    graph: &Graph,
    plan: Option<&DagPlan>,
    params: &SsmParams,
    regime: Regime,
    gamma: f64,
) -> Result<(WeightedAdjacency, DenseMatrix)> {
    match regime {
        Regime::General => Ok((build_adjacency_general(graph, params, gamma)?, params.b.clone())),
        Regime::Dag | Regime::DagNormalized => {
            let plan = plan.ok_or(Error::NotADag)?;
            build_adjacency_dag(graph, plan, params, regime == Regime::DagNormalized)
        }
        Regime::UndirectedLine => Ok((build_adjacency_undirected_line(graph, params)?, params.b.clone())),
    }
}
