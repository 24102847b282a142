//! The gated block, a small stacked model, and a deterministic trainer on
//! synthetic graph tasks.
//!
//! Block: `u = LayerNorm(X)`, `core = mixer(u)`, `g = core ⊙ Swish(u W_Z)`,
//! `out = X + f_Y(GatedMLP(g))` with `GatedMLP(g) = (Swish(g W_gate) ⊙ g W_up) W_down`.
//! `f_Y` starts at zero, so a fresh block is the identity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grad::{record_decomposed, record_mixer, GraphContext, MixerVars, Tape, Unary, Var};
use crate::graph::{decompose_grid, decompose_line, grid_graph, line_graph, Decomposition, Graph};
use crate::linalg::DenseMatrix;
use crate::params::{NamedTensors, ProjectionConfig, ProjectionWeights, Regime};
use crate::resolvent::{Algorithm, MixConfig};
use crate::rng::SeededRng;

/// Which decomposition parts share a weight set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharingMode {
    None,
    Complete,
    /// Parts scanning the same vertical direction share: {→↓, ←↓}, {→↑, ←↑}.
    RowWise,
    /// Diagonally opposite parts share: {→↓, ←↑}, {←↓, →↑}.
    Diagonal,
}

impl SharingMode {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "none" => Ok(SharingMode::None),
            "complete" => Ok(SharingMode::Complete),
            "row-wise" => Ok(SharingMode::RowWise),
            "diagonal" => Ok(SharingMode::Diagonal),
            _ => Err(Error::InvalidMode(format!("unknown sharing mode `{token}` (expected none, complete, row-wise, diagonal)"))),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            SharingMode::None => "none",
            SharingMode::Complete => "complete",
            SharingMode::RowWise => "row-wise",
            SharingMode::Diagonal => "diagonal",
        }
    }
}

/// Weight-set index for each part. Grid parts are expected in the order
/// (→,↓), (←,↓), (→,↑), (←,↑); on two-part lines row-wise and diagonal
/// sharing collapse to complete sharing.
pub fn sharing_assignment(num_parts: usize, mode: SharingMode) -> Result<Vec<usize>> {
    match (mode, num_parts) {
        (_, 0) => Err(Error::InvalidMode("decomposition has no parts".into())),
        (SharingMode::None, n) => Ok((0..n).collect()),
        (SharingMode::Complete, n) => Ok(vec![0; n]),
        (_, 2) => Ok(vec![0, 0]),
        (SharingMode::RowWise, 4) => Ok(vec![0, 0, 1, 1]),
        (SharingMode::Diagonal, 4) => Ok(vec![0, 1, 1, 0]),
        (m, n) => Err(Error::InvalidMode(format!("{} sharing needs 2 or 4 parts, got {n}", m.token()))),
    }
}

/// Per-part views onto a set of shared weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedWeights {
    pub sets: Vec<ProjectionWeights>,
    pub assignment: Vec<usize>,
}

impl SharedWeights {
    pub fn init(config: ProjectionConfig, num_parts: usize, mode: SharingMode, rng: &mut SeededRng) -> Result<Self> {
        let assignment = sharing_assignment(num_parts, mode)?;
        let count = assignment.iter().max().map_or(0, |m| m + 1);
        let sets = (0..count).map(|_| ProjectionWeights::init(config, rng)).collect::<Result<_>>()?;
        Ok(SharedWeights { sets, assignment })
    }

    pub fn view(&self, part: usize) -> &ProjectionWeights {
        &self.sets[self.assignment[part]]
    }
}

/// The topology a block runs on, with everything precomputed.
#[derive(Clone, Debug)]
pub enum Topology {
    Single { ctx: GraphContext, edge_x: Option<DenseMatrix> },
    Decomposed { parts: Vec<GraphContext>, assignment: Vec<usize>, edge_x: Vec<Option<DenseMatrix>> },
}

impl Topology {
    pub fn single(graph: &Graph, regime: Regime) -> Result<Self> {
        Ok(Topology::Single { ctx: GraphContext::new(graph, regime)?, edge_x: graph.edge_features().cloned() })
    }

    /// Every part runs under `regime` (normally a DAG regime).
    pub fn decomposed(decomposition: &Decomposition, regime: Regime, mode: SharingMode) -> Result<Self> {
        let parts = decomposition
            .parts
            .iter()
            .map(|p| GraphContext::with_plan(&p.graph, regime.is_dag().then(|| p.plan.clone()), regime))
            .collect::<Result<Vec<_>>>()?;
        let edge_x = (0..decomposition.num_parts())
            .map(|k| decomposition.source.edge_features().map(|z| decomposition.part_edge_features(k, z)))
            .collect();
        Ok(Topology::Decomposed { assignment: sharing_assignment(parts.len(), mode)?, parts, edge_x })
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Topology::Single { ctx, .. } => ctx.graph.num_nodes(),
            Topology::Decomposed { parts, .. } => parts[0].graph.num_nodes(),
        }
    }

    /// Number of distinct mixer weight sets a block needs.
    pub fn num_weight_sets(&self) -> usize {
        match self {
            Topology::Single { .. } => 1,
            Topology::Decomposed { assignment, .. } => assignment.iter().max().map_or(1, |m| m + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub projection: ProjectionConfig,
    /// Gated-MLP expansion factor.
    pub expansion: usize,
    pub mix: MixConfig,
}

impl BlockConfig {
    pub fn new(d_model: usize, d_state: usize, mix: MixConfig) -> Self {
        BlockConfig { projection: ProjectionConfig::new(d_model, d_state), expansion: 2, mix }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChimeraBlock {
    pub config: BlockConfig,
    /// One per sharing group.
    pub mixers: Vec<ProjectionWeights>,
    pub norm_scale: DenseMatrix,
    pub norm_shift: DenseMatrix,
    /// `D×D` gate projection.
    pub w_z: DenseMatrix,
    pub mlp_gate: DenseMatrix,
    pub mlp_up: DenseMatrix,
    pub mlp_down: DenseMatrix,
    /// `D×D` output projection, zero at init.
    pub f_y: DenseMatrix,
}

impl ChimeraBlock {
    pub fn init(config: BlockConfig, weight_sets: usize, rng: &mut SeededRng) -> Result<Self> {
        let d = config.projection.d_model;
        let e = config.expansion.max(1) * d;
        let std = 1.0 / libm::sqrt(d as f64);
        Ok(ChimeraBlock {
            mixers: (0..weight_sets.max(1)).map(|_| ProjectionWeights::init(config.projection, rng)).collect::<Result<_>>()?,
            norm_scale: DenseMatrix::filled(1, d, 1.0),
            norm_shift: DenseMatrix::zeros(1, d),
            w_z: rng.gaussian_matrix(d, d, std),
            mlp_gate: rng.gaussian_matrix(d, e, std),
            mlp_up: rng.gaussian_matrix(d, e, std),
            mlp_down: rng.gaussian_matrix(e, d, 1.0 / libm::sqrt(e as f64)),
            f_y: DenseMatrix::zeros(d, d),
            config,
        })
    }
}

impl NamedTensors for ChimeraBlock {
    fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        for (k, m) in self.mixers.iter().enumerate() {
            out.extend(m.tensors().into_iter().map(|(n, t)| (format!("mixer{k}.{n}"), t)));
        }
        out.push(("norm.scale".into(), &self.norm_scale));
        out.push(("norm.shift".into(), &self.norm_shift));
        out.push(("w_z".into(), &self.w_z));
        out.push(("mlp.gate".into(), &self.mlp_gate));
        out.push(("mlp.up".into(), &self.mlp_up));
        out.push(("mlp.down".into(), &self.mlp_down));
        out.push(("f_y".into(), &self.f_y));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = Vec::new();
        for (k, m) in self.mixers.iter_mut().enumerate() {
            out.extend(m.tensors_mut().into_iter().map(|(n, t)| (format!("mixer{k}.{n}"), t)));
        }
        out.push(("norm.scale".into(), &mut self.norm_scale));
        out.push(("norm.shift".into(), &mut self.norm_shift));
        out.push(("w_z".into(), &mut self.w_z));
        out.push(("mlp.gate".into(), &mut self.mlp_gate));
        out.push(("mlp.up".into(), &mut self.mlp_up));
        out.push(("mlp.down".into(), &mut self.mlp_down));
        out.push(("f_y".into(), &mut self.f_y));
        out
    }
}

/// Records a block; every tensor is registered as `{prefix}.{name}`.
pub fn record_block(tape: &mut Tape, prefix: &str, block: &ChimeraBlock, topo: &Topology, x: Var) -> Result<Var> {
    let mixers: Vec<MixerVars> =
        block.mixers.iter().enumerate().map(|(k, m)| MixerVars::register(tape, &format!("{prefix}.mixer{k}"), m)).collect();
    let mut p = |name: &str, m: &DenseMatrix| tape.param(format!("{prefix}.{name}"), m.clone());
    let scale = p("norm.scale", &block.norm_scale);
    let shift = p("norm.shift", &block.norm_shift);
    let w_z = p("w_z", &block.w_z);
    let gate_w = p("mlp.gate", &block.mlp_gate);
    let up_w = p("mlp.up", &block.mlp_up);
    let down_w = p("mlp.down", &block.mlp_down);
    let f_y = p("f_y", &block.f_y);

    let u = tape.layer_norm(x, scale, shift)?;
    let core = match topo {
        Topology::Single { ctx, edge_x } => {
            let ex = edge_x.as_ref().map(|z| tape.constant(z.clone()));
            record_mixer(tape, ctx, u, ex, &mixers[0], &block.config.mix)?
        }
        Topology::Decomposed { parts, assignment, edge_x } => {
            let ex: Vec<Option<Var>> = edge_x.iter().map(|z| z.as_ref().map(|z| tape.constant(z.clone()))).collect();
            record_decomposed(tape, parts, u, &ex, &mixers, assignment, &block.config.mix)?
        }
    };
    let z = tape.matmul(u, w_z)?;
    let z = tape.unary(z, Unary::Swish)?;
    let gated = tape.hadamard(core, z)?;
    let gate = tape.matmul(gated, gate_w)?;
    let gate = tape.unary(gate, Unary::Swish)?;
    let up = tape.matmul(gated, up_w)?;
    let hidden = tape.hadamard(gate, up)?;
    let mlp = tape.matmul(hidden, down_w)?;
    let out = tape.matmul(mlp, f_y)?;
    tape.add(x, out)
}

/// Plain evaluation of one block.
pub fn block_forward(block: &ChimeraBlock, topo: &Topology, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = record_block(&mut tape, "block", block, topo, xv)?;
    Ok(tape.value(y).clone())
}

/// Input projection → blocks → linear readout.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub input: DenseMatrix,
    pub input_bias: DenseMatrix,
    pub blocks: Vec<ChimeraBlock>,
    pub readout: DenseMatrix,
    pub readout_bias: DenseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub num_blocks: usize,
    pub block: BlockConfig,
}

impl Model {
    pub fn init(config: ModelConfig, weight_sets: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let d = config.block.projection.d_model;
        Ok(Model {
            input: rng.gaussian_matrix(config.input_dim, d, 1.0 / libm::sqrt(config.input_dim.max(1) as f64)),
            input_bias: DenseMatrix::zeros(1, d),
            blocks: (0..config.num_blocks).map(|_| ChimeraBlock::init(config.block, weight_sets, &mut rng)).collect::<Result<_>>()?,
            readout: rng.gaussian_matrix(d, config.output_dim, 1.0 / libm::sqrt(d as f64)),
            readout_bias: DenseMatrix::zeros(1, config.output_dim),
        })
    }
}

impl NamedTensors for Model {
    fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out: Vec<(String, &DenseMatrix)> = vec![("input.weight".into(), &self.input), ("input.bias".into(), &self.input_bias)];
        for (b, block) in self.blocks.iter().enumerate() {
            out.extend(block.tensors().into_iter().map(|(n, t)| (format!("block{b}.{n}"), t)));
        }
        out.push(("readout.weight".into(), &self.readout));
        out.push(("readout.bias".into(), &self.readout_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out: Vec<(String, &mut DenseMatrix)> =
            vec![("input.weight".into(), &mut self.input), ("input.bias".into(), &mut self.input_bias)];
        for (b, block) in self.blocks.iter_mut().enumerate() {
            out.extend(block.tensors_mut().into_iter().map(|(n, t)| (format!("block{b}.{n}"), t)));
        }
        out.push(("readout.weight".into(), &mut self.readout));
        out.push(("readout.bias".into(), &mut self.readout_bias));
        out
    }
}

/// Records the model on `topo` and returns the prediction (`T×out`).
pub fn record_model(tape: &mut Tape, model: &Model, topo: &Topology, x: &DenseMatrix) -> Result<Var> {
    let xv = tape.constant(x.clone());
    let w_in = tape.param("input.weight", model.input.clone());
    let b_in = tape.param("input.bias", model.input_bias.clone());
    let h = tape.matmul(xv, w_in)?;
    let mut h = tape.add_row(h, b_in)?;
    for (b, block) in model.blocks.iter().enumerate() {
        h = record_block(tape, &format!("block{b}"), block, topo, h)?;
    }
    let w_out = tape.param("readout.weight", model.readout.clone());
    let b_out = tape.param("readout.bias", model.readout_bias.clone());
    let y = tape.matmul(h, w_out)?;
    tape.add_row(y, b_out)
}

pub fn model_forward(model: &Model, topo: &Topology, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let y = record_model(&mut tape, model, topo, x)?;
    Ok(tape.value(y).clone())
}

/// One supervised example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub topology: Topology,
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

/// How the graph of a task is presented to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// The task graph as is.
    Native,
    /// Canonical DAG decomposition (two chains for lines, four for grids).
    Decomposed,
    /// Row-major flattening into a forward chain.
    ForwardChain,
    /// Row-major flattening into a forward + reverse chain pair.
    BidirectionalChain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskKind {
    /// Chain inputs `x ~ N(0,1)`, targets `y_i = Σ_{j≤i} ρ^{i-j} x_j`.
    PathSum { length: usize, decay: f64 },
    /// Random DAGs (edge `j→i`, `j<i`, probability `p`); target is
    /// `ln(1 + #ancestors)`.
    AncestorCount { nodes: usize, edge_prob: f64 },
    /// Grid inputs `x ~ N(0,1)`; target is the mean of `x` over the node
    /// and its up/down/left/right neighbors.
    GridAverage { height: usize, width: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::PathSum { .. } => "path-sum",
            TaskKind::AncestorCount { .. } => "ancestor-count",
            TaskKind::GridAverage { .. } => "grid-average",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub structure: Structure,
    pub regime: Regime,
    pub sharing: SharingMode,
}

/// Exact path-sum targets.
pub fn path_sum_targets(x: &[f64], decay: f64) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|&v| {
            acc = decay * acc + v;
            acc
        })
        .collect()
}

/// Number of ancestors of every node, by explicit reverse reachability.
pub fn ancestor_counts(graph: &Graph) -> Vec<usize> {
    let n = graph.num_nodes();
    let parents = graph.conv_neighbors();
    (0..n)
        .map(|i| {
            let mut seen = vec![false; n];
            let mut stack = parents[i].clone();
            let mut count = 0;
            while let Some(v) = stack.pop() {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.extend_from_slice(&parents[v]);
                }
            }
            count
        })
        .collect()
}

/// Radius-one von Neumann neighborhood mean on an `H×W` grid.
pub fn grid_average_targets(x: &[f64], height: usize, width: usize) -> Vec<f64> {
    (0..height * width)
        .map(|v| {
            let (r, c) = (v / width, v % width);
            let mut sum = x[v];
            let mut count = 1.0;
            let mut add = |u: usize| {
                sum += x[u];
                count += 1.0;
            };
            if r > 0 {
                add(v - width);
            }
            if r + 1 < height {
                add(v + width);
            }
            if c > 0 {
                add(v - 1);
            }
            if c + 1 < width {
                add(v + 1);
            }
            sum / count
        })
        .collect()
}

fn flat_topology(num_nodes: usize, structure: Structure, regime: Regime, sharing: SharingMode) -> Result<Option<Topology>> {
    Ok(match structure {
        Structure::ForwardChain => Some(Topology::single(&line_graph(num_nodes, true)?, regime)?),
        Structure::BidirectionalChain => Some(Topology::decomposed(&decompose_line(num_nodes)?, regime, sharing)?),
        _ => None,
    })
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, structure: Structure) -> Self {
        SyntheticTask { kind, structure, regime: Regime::Dag, sharing: SharingMode::Complete }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            TaskKind::AncestorCount { .. } => 2,
            _ => 1,
        }
    }

    /// Shared topology for fixed-graph tasks.
    fn fixed_topology(&self) -> Result<Option<Topology>> {
        let (regime, sharing) = (self.regime, self.sharing);
        match self.kind {
            TaskKind::PathSum { length, .. } => Ok(Some(match self.structure {
                Structure::Native | Structure::ForwardChain => Topology::single(&line_graph(length, true)?, regime)?,
                Structure::Decomposed | Structure::BidirectionalChain => Topology::decomposed(&decompose_line(length)?, regime, sharing)?,
            })),
            TaskKind::GridAverage { height, width } => Ok(Some(match self.structure {
                Structure::Decomposed => Topology::decomposed(&decompose_grid(height, width)?, regime, sharing)?,
                Structure::Native => Topology::single(&grid_graph(height, width)?, regime)?,
                s => flat_topology(height * width, s, regime, sharing)?.expect("flat structure"),
            })),
            TaskKind::AncestorCount { .. } => Ok(None),
        }
    }

    /// `count` samples drawn from `seed`.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<Sample>> {
        let mut rng = SeededRng::new(seed);
        let fixed = self.fixed_topology()?;
        (0..count)
            .map(|_| match self.kind {
                TaskKind::PathSum { length, decay } => {
                    let x: Vec<f64> = (0..length).map(|_| rng.normal()).collect();
                    let y = path_sum_targets(&x, decay);
                    Ok(Sample { topology: fixed.clone().expect("fixed"), x: DenseMatrix::column(&x), y: DenseMatrix::column(&y) })
                }
                TaskKind::GridAverage { height, width } => {
                    let x: Vec<f64> = (0..height * width).map(|_| rng.normal()).collect();
                    let y = grid_average_targets(&x, height, width);
                    Ok(Sample { topology: fixed.clone().expect("fixed"), x: DenseMatrix::column(&x), y: DenseMatrix::column(&y) })
                }
                TaskKind::AncestorCount { nodes, edge_prob } => {
                    let mut edges = Vec::new();
                    for i in 0..nodes {
                        for j in 0..i {
                            if rng.bernoulli(edge_prob) {
                                edges.push((j, i));
                            }
                        }
                    }
                    let g = Graph::new(nodes, true, &edges)?;
                    let counts = ancestor_counts(&g);
                    let parents = g.conv_neighbors();
                    let x = DenseMatrix::from_fn(nodes, 2, |i, k| if k == 0 { 1.0 } else { parents[i].len() as f64 / 2.0 });
                    let y = DenseMatrix::from_fn(nodes, 1, |i, _| libm::log1p(counts[i] as f64));
                    Ok(Sample { topology: Topology::single(&g, self.regime)?, x, y })
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-tensor optimizer state keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    step: u64,
    first: BTreeMap<String, DenseMatrix>,
    second: BTreeMap<String, DenseMatrix>,
}

impl OptimizerState {
    /// Applies one update in place. Tensors without a gradient are skipped.
    pub fn apply(&mut self, opt: &Optimizer, target: &mut impl NamedTensors, grads: &BTreeMap<String, DenseMatrix>) -> Result<()> {
        self.step += 1;
        for (name, tensor) in target.tensors_mut() {
            let Some(g) = grads.get(&name) else { continue };
            if g.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch { op: "optimizer", left: tensor.shape(), right: g.shape() });
            }
            let zeros = || DenseMatrix::zeros(g.rows(), g.cols());
            match *opt {
                Optimizer::Sgd { lr, momentum } => {
                    let m = self.first.entry(name).or_insert_with(zeros);
                    for ((w, mv), gv) in tensor.as_mut_slice().iter_mut().zip(m.as_mut_slice()).zip(g.as_slice()) {
                        *mv = momentum * *mv + gv;
                        *w -= lr * *mv;
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let c1 = 1.0 - libm::pow(beta1, self.step as f64);
                    let c2 = 1.0 - libm::pow(beta2, self.step as f64);
                    let m = self.first.entry(name.clone()).or_insert_with(zeros);
                    let v = self.second.entry(name).or_insert_with(zeros);
                    for (((w, mv), vv), gv) in
                        tensor.as_mut_slice().iter_mut().zip(m.as_mut_slice()).zip(v.as_mut_slice()).zip(g.as_slice())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *w -= lr * (*mv / c1) / (libm::sqrt(*vv / c2) + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean loss over `samples` and, if requested, the averaged gradients.
pub fn batch_loss(model: &Model, samples: &[Sample], with_grads: bool) -> Result<(f64, BTreeMap<String, DenseMatrix>)> {
    let mut total = 0.0;
    let mut grads: BTreeMap<String, DenseMatrix> = BTreeMap::new();
    for s in samples {
        let mut tape = Tape::new();
        let y = record_model(&mut tape, model, &s.topology, &s.x)?;
        let loss = tape.mse(y, s.y.clone())?;
        total += tape.value(loss)[(0, 0)];
        if with_grads {
            let g = tape.backward(loss)?.params(&tape);
            for (name, gm) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&gm)?,
                    None => {
                        grads.insert(name, gm);
                    }
                }
            }
        }
    }
    let n = samples.len().max(1) as f64;
    for g in grads.values_mut() {
        *g = g.scale(1.0 / n);
    }
    Ok((total / n, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: Optimizer,
    pub train_samples: usize,
    pub val_samples: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Full-batch training loss before each step, then the final loss.
    pub losses: Vec<f64>,
    pub final_train_mse: f64,
    pub val_mse: f64,
    /// Variance of the validation targets.
    pub target_variance: f64,
    /// Validation MSE of predicting the training-target mean.
    pub baseline_mse: f64,
    pub num_parameters: usize,
}

impl TrainReport {
    pub fn val_ratio(&self) -> f64 {
        self.val_mse / self.target_variance
    }
}

fn target_values(samples: &[Sample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.y.as_slice().iter().copied()).collect()
}

/// Seeds for the training and validation sets never coincide.
pub fn split_seeds(seed: u64) -> (u64, u64) {
    let train = seed.wrapping_mul(2).wrapping_add(1);
    (train, train ^ 0x5eed_0000_0000_0000)
}

/// Full-batch training; deterministic for a given config.
pub fn train(task: &SyntheticTask, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    let (train_seed, val_seed) = split_seeds(config.seed);
    let train_set = task.generate(config.train_samples, train_seed)?;
    let val_set = task.generate(config.val_samples, val_seed)?;
    let sets = train_set.first().map_or(1, |s| s.topology.num_weight_sets());
    let mut model = Model::init(config.model, sets, config.seed)?;
    let mut state = OptimizerState::default();
    let mut losses = Vec::with_capacity(config.steps + 1);
    // Overflow inside the forward pass surfaces as a non-finite error.
    let diverged = |step| move |e| match e {
        Error::NonFinite { .. } => Error::DivergenceDetected { step },
        e => e,
    };
    for step in 0..config.steps {
        let (loss, grads) = batch_loss(&model, &train_set, true).map_err(diverged(step))?;
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        losses.push(loss);
        state.apply(&config.optimizer, &mut model, &grads)?;
    }
    let (final_train_mse, _) = batch_loss(&model, &train_set, false).map_err(diverged(config.steps))?;
    if !final_train_mse.is_finite() {
        return Err(Error::DivergenceDetected { step: config.steps });
    }
    losses.push(final_train_mse);
    let (val_mse, _) = batch_loss(&model, &val_set, false)?;
    let val_targets = target_values(&val_set);
    let train_targets = target_values(&train_set);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (val_mean, train_mean) = (mean(&val_targets), mean(&train_targets));
    let target_variance = val_targets.iter().map(|y| (y - val_mean) * (y - val_mean)).sum::<f64>() / val_targets.len().max(1) as f64;
    let baseline_mse = val_targets.iter().map(|y| (y - train_mean) * (y - train_mean)).sum::<f64>() / val_targets.len().max(1) as f64;
    let num_parameters = model.num_scalars();
    Ok((model, TrainReport { losses, final_train_mse, val_mse, target_variance, baseline_mse, num_parameters }))
}

/// Default model for a task: one block, `D = 8`, `d = 4`.
pub fn default_model_config(task: &SyntheticTask, algorithm: Algorithm) -> ModelConfig {
    ModelConfig {
        input_dim: task.input_dim(),
        output_dim: 1,
        num_blocks: 1,
        block: BlockConfig::new(8, 4, MixConfig::new(task.regime, algorithm)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::plan_dag;

    #[test]
    fn sharing_modes() {
        assert_eq!(sharing_assignment(4, SharingMode::Complete).unwrap(), vec![0; 4]);
        assert_eq!(sharing_assignment(4, SharingMode::None).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(sharing_assignment(4, SharingMode::Diagonal).unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(sharing_assignment(4, SharingMode::RowWise).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(sharing_assignment(2, SharingMode::Diagonal).unwrap(), vec![0, 0]);
        assert!(matches!(sharing_assignment(3, SharingMode::RowWise), Err(Error::InvalidMode(_))));
        assert!(matches!(SharingMode::parse("rows"), Err(Error::InvalidMode(_))));
        let mut rng = SeededRng::new(0);
        let cfg = ProjectionConfig::new(4, 2);
        let none = SharedWeights::init(cfg, 4, SharingMode::None, &mut rng).unwrap();
        let one = SharedWeights::init(cfg, 4, SharingMode::Complete, &mut rng).unwrap();
        assert_eq!(none.sets.len(), 4);
        assert_eq!(one.sets.len(), 1);
        assert!(core::ptr::eq(one.view(0), one.view(3)));
    }

    #[test]
    fn fresh_block_is_identity() {
        let mut rng = SeededRng::new(1);
        let g = line_graph(7, true).unwrap();
        let topo = Topology::single(&g, Regime::Dag).unwrap();
        let block = ChimeraBlock::init(BlockConfig::new(4, 2, MixConfig::new(Regime::Dag, Algorithm::Recurrence)), 1, &mut rng).unwrap();
        let x = rng.gaussian_matrix(7, 4, 1.0);
        assert_eq!(block_forward(&block, &topo, &x).unwrap(), x);
    }

    #[test]
    fn targets() {
        assert_eq!(path_sum_targets(&[1.0, 1.0, 1.0], 0.5), vec![1.0, 1.5, 1.75]);
        let g = Graph::new(4, true, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(ancestor_counts(&g), vec![0, 1, 2, 0]);
        plan_dag(&g).unwrap();
        let avg = grid_average_targets(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(avg[0], (1.0 + 2.0 + 3.0) / 3.0);
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let task = SyntheticTask::new(TaskKind::PathSum { length: 6, decay: 0.8 }, Structure::Native);
        let cfg = TrainConfig {
            steps: 4,
            optimizer: Optimizer::adam(0.0),
            train_samples: 3,
            val_samples: 2,
            seed: 1,
            model: default_model_config(&task, Algorithm::Recurrence),
        };
        let (_, report) = train(&task, &cfg).unwrap();
        assert!(report.losses.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
    }
}
