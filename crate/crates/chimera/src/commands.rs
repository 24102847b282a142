//! Command-line surface: argument definitions, validation and the command
//! runners. The binary is a thin wrapper around [`run`].

use std::path::PathBuf;

use chimera_core::graph::{decompose_grid, decompose_line, plan_dag};
use chimera_core::layer::{
    default_model_config, train, Optimizer, SharingMode, Structure, SyntheticTask, TaskKind, TrainConfig,
};
use chimera_core::params::{is_undirected_line, NamedTensors, ProjectionConfig, DEFAULT_GAMMA};
use chimera_core::resolvent::chimera_forward;
use chimera_core::rng::SeededRng;
use chimera_core::{Algorithm, Decomposition, Graph, ProjectionWeights, Regime};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bench::{self, BenchInstance, BenchRow, Dtype};
use crate::error::{CliError, CliResult};
use crate::formats::{self, Checkpoint, GraphFile, TensorRecord};
use crate::report::{Check, Environment, Report, Stopwatch};
use crate::source::{dag_with_diameter, GraphSource};
use crate::suites::{self, SuiteConfig};

/// Environment variable capping worker threads (bench throughput mode only).
pub const THREADS_VAR: &str = "CHIMERA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "chimera", version, about = "Graph-structured state-space mixing: verification, benchmarks, toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suites on one graph and report every check.
    Verify(CommonArgs),
    /// Time mask algorithms over a size or diameter sweep.
    Bench(BenchArgs),
    /// Compare backward gradients with central finite differences.
    Gradcheck(CommonArgs),
    /// Train a small model on a synthetic graph task.
    Train(TrainArgs),
    /// Write the DAG parts of a line or grid as graph files.
    Decompose(CommonArgs),
    /// Run one mixing layer and report its output.
    Forward(ForwardArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Graph file, or generator: chain:<T>, line:<T>, grid:<H>x<W>,
    /// randdag:<T>:<p>:<seed>, randgraph:<T>:<p>:<seed>.
    #[arg(long)]
    pub graph: Option<String>,
    /// general | dag | dag-normalized | undirected-line
    #[arg(long, default_value = "dag")]
    pub regime: String,
    /// dense | recurrence | squaring | neumann:<k>
    #[arg(long)]
    pub algo: Option<String>,
    /// Row-sum budget of the general regime, in (0, 1).
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// State size d per head.
    #[arg(long, default_value_t = 4)]
    pub dstate: usize,
    /// Model width D.
    #[arg(long, default_value_t = 8)]
    pub dmodel: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// f64 | f32 (f32: bench with the recurrence only)
    #[arg(long, default_value = "f64")]
    pub dtype: String,
    /// Pass threshold of the command's main check.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output path (report JSON, or a directory for decompose).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Swept quantity: `nodes` (chains of the given sizes) or `diameter`
    /// (DAGs with `--nodes` nodes and the given longest paths).
    #[arg(long, default_value = "nodes")]
    pub sweep: String,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384, 32768, 65536])]
    pub sizes: Vec<usize>,
    /// Node count for diameter sweeps.
    #[arg(long, default_value_t = 300)]
    pub nodes: usize,
    /// Timed repetitions per point (at least 5).
    #[arg(long, default_value_t = bench::MIN_REPS)]
    pub reps: usize,
    /// Also write the rows as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Additionally run this many independent recurrences across
    /// CHIMERA_THREADS threads (reported separately, never fitted).
    #[arg(long)]
    pub throughput: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// path-sum | grid-average | ancestor-count
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Learning rate (default depends on the task).
    #[arg(long)]
    pub lr: Option<f64>,
    /// adam | sgd
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// native | decomposed | forward-chain | bidirectional-chain (default:
    /// decomposed for grids, native otherwise).
    #[arg(long)]
    pub structure: Option<String>,
    /// none | complete | row-wise | diagonal
    #[arg(long, default_value = "complete")]
    pub sharing: String,
    #[arg(long, default_value_t = 16)]
    pub train_samples: usize,
    #[arg(long, default_value_t = 32)]
    pub val_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    /// Write the trained model checkpoint here.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mixer checkpoint to load (default: seeded initialization).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the mixer weights that were used to this checkpoint.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
}

/// Validated form of [`CommonArgs`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub graph: Option<String>,
    pub regime: &'static str,
    pub algo: Option<String>,
    pub gamma: f64,
    pub heads: usize,
    pub dstate: usize,
    pub dmodel: usize,
    pub seed: u64,
    pub dtype: Dtype,
    pub tol: Option<f64>,
    #[serde(skip)]
    source: Option<GraphSource>,
    #[serde(skip)]
    regime_value: Regime,
    #[serde(skip)]
    algorithm: Option<Algorithm>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(args: &CommonArgs) -> CliResult<Self> {
        let regime = Regime::parse(&args.regime)?;
        let algorithm = args.algo.as_deref().map(Algorithm::parse).transpose()?;
        if let Some(a) = algorithm {
            a.check(regime)?;
        }
        if !(args.gamma > 0.0 && args.gamma < 1.0) {
            return Err(chimera_core::Error::GammaOutOfRange { gamma: args.gamma }.into());
        }
        if args.heads == 0 || args.dstate == 0 || args.dmodel == 0 {
            return Err(CliError::Usage("--heads, --dstate and --dmodel must be positive".into()));
        }
        ProjectionConfig { heads: args.heads, ..ProjectionConfig::new(args.dmodel, args.dstate) }.validate()?;
        if let Some(t) = args.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Usage(format!("--tol must be a positive number, got {t}")));
            }
        }
        let source = args.graph.as_deref().map(GraphSource::parse).transpose()?;
        Ok(RunConfig {
            graph: source.as_ref().map(ToString::to_string),
            regime: regime.token(),
            algo: algorithm.map(|a| a.to_string()),
            gamma: args.gamma,
            heads: args.heads,
            dstate: args.dstate,
            dmodel: args.dmodel,
            seed: args.seed,
            dtype: Dtype::parse(&args.dtype)?,
            tol: args.tol,
            source,
            regime_value: regime,
            algorithm,
            out: args.out.clone(),
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime_value
    }

    pub fn algorithm(&self) -> Option<Algorithm> {
        self.algorithm
    }

    pub fn graph(&self) -> CliResult<Graph> {
        self.source.as_ref().ok_or_else(|| CliError::Usage("--graph is required".into()))?.build()
    }

    fn require_f64(&self) -> CliResult<()> {
        match self.dtype {
            Dtype::F64 => Ok(()),
            Dtype::F32 => Err(CliError::UnsupportedDtype),
        }
    }

    fn suite(&self, default_tol: f64) -> SuiteConfig {
        SuiteConfig {
            regime: self.regime_value,
            algorithm: self.algorithm,
            gamma: self.gamma,
            d_model: self.dmodel,
            d_state: self.dstate,
            heads: self.heads,
            seed: self.seed,
            grad_tol: self.tol.unwrap_or(default_tol),
        }
    }

    fn echo(&self, extra: serde_json::Value) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config is serializable");
        if let (Some(map), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            map.extend(more);
        }
        v
    }
}

/// What a command produced.
pub struct Outcome {
    pub report: Report,
    /// Extra text for stdout (e.g. CSV rows).
    pub stdout: String,
}

/// Worker cap from [`THREADS_VAR`] (default 1).
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Runs a parsed command. The report is also written to `--out` (except
/// for decompose, where `--out` is the part directory).
pub fn run(cli: &Cli, threads: usize) -> CliResult<Outcome> {
    let clock = Stopwatch::start();
    let (mut outcome, out) = match &cli.command {
        Command::Verify(a) => {
            let cfg = RunConfig::validate(a)?;
            (cmd_verify(&cfg)?, cfg.out.clone())
        }
        Command::Bench(a) => {
            let cfg = RunConfig::validate(&a.common)?;
            (cmd_bench(&cfg, a, threads)?, cfg.out.clone())
        }
        Command::Gradcheck(a) => {
            let cfg = RunConfig::validate(a)?;
            (cmd_gradcheck(&cfg)?, cfg.out.clone())
        }
        Command::Train(a) => {
            let cfg = RunConfig::validate(&a.common)?;
            (cmd_train(&cfg, a)?, cfg.out.clone())
        }
        Command::Decompose(a) => {
            let cfg = RunConfig::validate(a)?;
            (cmd_decompose(&cfg)?, None)
        }
        Command::Forward(a) => {
            let cfg = RunConfig::validate(&a.common)?;
            (cmd_forward(&cfg, a)?, cfg.out.clone())
        }
    };
    outcome.report.timings.wall_ms = clock.ms();
    outcome.report.environment = Environment::current(threads);
    if let Some(path) = out {
        formats::write_json(&path, &outcome.report)?;
    }
    Ok(outcome)
}

pub fn cmd_verify(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.require_f64()?;
    let graph = cfg.graph()?;
    let mut report = Report::new("verify", cfg.echo(json!({})));
    report.checks = suites::verify(&graph, &cfg.suite(1e-5))?;
    report.results = json!({ "num_nodes": graph.num_nodes(), "num_edges": graph.num_edges(), "diameter": graph.diameter() });
    Ok(Outcome { report, stdout: String::new() })
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.require_f64()?;
    let graph = cfg.graph()?;
    let algo = cfg.algorithm.unwrap_or(Algorithm::Dense);
    let suite = cfg.suite(1e-5);
    let g = suites::gradcheck(&graph, &suite, algo)?;
    let mut report = Report::new("gradcheck", cfg.echo(json!({})));
    report.push(Check::below("grad.max-relative-error", g.max_rel_err, suite.grad_tol));
    report.push(Check::exactly("grad.replay-bit-exact", f64::from(u8::from(g.replay_exact)), 1.0));
    match g.inverse_matmuls {
        Some(m) => report.push(Check::exactly("grad.resolvent-backward-matmuls-per-head", m as f64 / cfg.heads as f64, 2.0)),
        None => report.push(Check::skip("grad.resolvent-backward-matmuls-per-head", "no dense resolvent on this path")),
    }
    report.timings.matmul_count = g.inverse_matmuls;
    report.results = json!({ "num_scalars": g.num_scalars, "fd_step": suites::FD_STEP, "floor": suites::GRAD_FLOOR });
    Ok(Outcome { report, stdout: String::new() })
}

fn bench_graph(sweep: &str, size: usize, nodes: usize) -> CliResult<Graph> {
    match sweep {
        "nodes" => Ok(chimera_core::graph::line_graph(size, true)?),
        "diameter" => {
            if size >= nodes {
                return Err(CliError::Usage(format!("diameter {size} needs more than --nodes {nodes}")));
            }
            Ok(dag_with_diameter(nodes, size)?)
        }
        other => Err(CliError::Usage(format!("unknown sweep `{other}` (expected one of: nodes, diameter)"))),
    }
}

pub fn cmd_bench(cfg: &RunConfig, args: &BenchArgs, threads: usize) -> CliResult<Outcome> {
    let algo = cfg.algorithm.unwrap_or(Algorithm::Recurrence);
    if cfg.dtype == Dtype::F32 && algo != Algorithm::Recurrence {
        return Err(CliError::UnsupportedDtype);
    }
    if args.sizes.len() < 2 || args.sizes.contains(&0) {
        return Err(CliError::Usage("--sizes needs at least two positive values".into()));
    }
    if args.sweep == "nodes" && cfg.regime() != Regime::Dag && cfg.regime() != Regime::DagNormalized {
        return Err(CliError::Usage("bench sweeps use directed chains; pick --regime dag or dag-normalized".into()));
    }
    let extra = json!({ "sweep": args.sweep, "sizes": args.sizes, "nodes": args.nodes, "reps": args.reps.max(bench::MIN_REPS) });
    let mut report = Report::new("bench", cfg.echo(extra));
    let mut rows: Vec<BenchRow> = Vec::new();
    let mut stdout = String::from(bench::CSV_HEADER);
    stdout.push('\n');
    let mut last = None;
    for &size in &args.sizes {
        let graph = bench_graph(&args.sweep, size, args.nodes)?;
        let mut inst = BenchInstance::random(graph, cfg.regime(), cfg.gamma, cfg.dstate, cfg.dmodel, cfg.seed)?;
        if cfg.dtype == Dtype::F32 {
            inst = inst.with_f32();
        }
        let row = bench::measure(&inst, size, algo, cfg.dtype, args.reps)?;
        stdout.push_str(&bench::csv_line(&row));
        stdout.push('\n');
        rows.push(row);
        last = Some(inst);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    let slope = bench::loglog_slope(&xs, &ys);
    stdout.push_str(&format!("# log-log slope of wall_ms vs {}: {slope:.3}\n", args.sweep));
    if args.sweep == "diameter" && algo == Algorithm::Squaring {
        let excess = rows
            .iter()
            .map(|r| r.matmul_count as f64 - (2.0 * (r.size.max(1) as f64).log2().ceil() + 2.0))
            .fold(f64::NEG_INFINITY, f64::max);
        report.push(Check::at_most("bench.squaring-matmuls-over-log-bound", excess, 0.0));
    }
    let mut throughput = None;
    if let (Some(copies), Some(inst)) = (args.throughput, &last) {
        if algo != Algorithm::Recurrence || cfg.dtype != Dtype::F64 {
            return Err(CliError::Usage("--throughput runs the f64 recurrence only".into()));
        }
        let per_sec = bench::throughput(inst, copies, threads)?;
        stdout.push_str(&format!("# throughput: {per_sec:.1} instances/s on {threads} thread(s)\n"));
        throughput = Some(per_sec);
    }
    report.timings.matmul_count = rows.iter().map(|r| r.matmul_count).max();
    if let Some(path) = &args.csv {
        std::fs::write(path, bench::to_csv(&rows)).map_err(|source| CliError::Write { path: path.clone(), source })?;
    }
    let counts: Vec<_> = rows.iter().map(|r| json!({ "size": r.size, "algo": r.algo, "matmul_count": r.matmul_count })).collect();
    report.results = json!({ "rows": counts });
    // wall times are machine noise: they live with the timings, outside the
    // deterministic body
    report.timings.details = Some(json!({ "rows": rows, "loglog_slope": slope, "throughput_per_s": throughput }));
    Ok(Outcome { report, stdout })
}

fn task_from(source: Option<&GraphSource>, name: &str) -> CliResult<TaskKind> {
    let mismatch = |want: &str| CliError::Usage(format!("task `{name}` needs --graph {want}"));
    match (name, source) {
        ("path-sum", Some(GraphSource::Chain(t))) => Ok(TaskKind::PathSum { length: *t, decay: 0.9 }),
        ("path-sum", _) => Err(mismatch("chain:<T>")),
        ("grid-average", Some(GraphSource::Grid(h, w))) => Ok(TaskKind::GridAverage { height: *h, width: *w }),
        ("grid-average", _) => Err(mismatch("grid:<H>x<W>")),
        ("ancestor-count", Some(GraphSource::RandDag { nodes, p, .. })) => Ok(TaskKind::AncestorCount { nodes: *nodes, edge_prob: *p }),
        ("ancestor-count", _) => Err(mismatch("randdag:<T>:<p>:<seed>")),
        _ => Err(CliError::Usage(format!("unknown task `{name}` (expected one of: path-sum, grid-average, ancestor-count)"))),
    }
}

fn parse_structure(token: &str) -> CliResult<Structure> {
    match token {
        "native" => Ok(Structure::Native),
        "decomposed" => Ok(Structure::Decomposed),
        "forward-chain" => Ok(Structure::ForwardChain),
        "bidirectional-chain" => Ok(Structure::BidirectionalChain),
        _ => Err(CliError::Usage(format!(
            "unknown structure `{token}` (expected one of: native, decomposed, forward-chain, bidirectional-chain)"
        ))),
    }
}

/// Learning rate used when `--lr` is not given.
pub fn default_lr(kind: &TaskKind) -> f64 {
    match kind {
        TaskKind::PathSum { .. } => 0.03,
        _ => 0.01,
    }
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> CliResult<Outcome> {
    cfg.require_f64()?;
    let kind = task_from(cfg.source.as_ref(), &args.task)?;
    let structure = match (&args.structure, kind) {
        (Some(s), _) => parse_structure(s)?,
        (None, TaskKind::GridAverage { .. }) => Structure::Decomposed,
        (None, _) => Structure::Native,
    };
    let mut task = SyntheticTask::new(kind, structure);
    task.regime = cfg.regime();
    task.sharing = SharingMode::parse(&args.sharing)?;
    let algo = cfg.algorithm.unwrap_or(if cfg.regime().is_dag() { Algorithm::Recurrence } else { Algorithm::Dense });
    algo.check(cfg.regime())?;
    let lr = args.lr.unwrap_or_else(|| default_lr(&kind));
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(CliError::Usage(format!("--lr must be a non-negative number, got {lr}")));
    }
    let optimizer = match args.optimizer.as_str() {
        "adam" => Optimizer::adam(lr),
        "sgd" => Optimizer::Sgd { lr, momentum: args.momentum },
        other => return Err(CliError::Usage(format!("unknown optimizer `{other}` (expected one of: adam, sgd)"))),
    };
    if args.train_samples == 0 || args.val_samples == 0 || args.blocks == 0 {
        return Err(CliError::Usage("--train-samples, --val-samples and --blocks must be positive".into()));
    }
    let mut model = default_model_config(&task, algo);
    model.num_blocks = args.blocks;
    model.block.projection = ProjectionConfig { heads: cfg.heads, ..ProjectionConfig::new(cfg.dmodel, cfg.dstate) };
    model.block.mix.gamma = cfg.gamma;
    let config = TrainConfig { steps: args.steps, optimizer, train_samples: args.train_samples, val_samples: args.val_samples, seed: cfg.seed, model };
    let extra = json!({
        "task": args.task,
        "structure": format!("{structure:?}"),
        "sharing": task.sharing.token(),
        "steps": args.steps,
        "lr": lr,
        "optimizer": args.optimizer,
        "train_samples": args.train_samples,
        "val_samples": args.val_samples,
        "blocks": args.blocks,
        "algorithm": algo.to_string(),
    });
    let mut report = Report::new("train", cfg.echo(extra));
    let (trained, r) = train(&task, &config)?;
    let bar = cfg.tol.unwrap_or(0.1);
    report.push(Check::below("train.val-mse-over-target-variance", r.val_ratio(), bar));
    report.results = json!({
        "val_mse": r.val_mse,
        "final_train_mse": r.final_train_mse,
        "target_variance": r.target_variance,
        "baseline_mse": r.baseline_mse,
        "num_parameters": r.num_parameters,
        "losses": r.losses,
    });
    if let Some(path) = &args.weights {
        let config = json!({ "task": args.task, "model": format!("{:?}", config.model), "num_parameters": trained.num_scalars() });
        formats::write_json(path, &Checkpoint::capture("model", config, &trained))?;
    }
    Ok(Outcome { report, stdout: String::new() })
}

fn decomposition_of(source: Option<&GraphSource>, graph: &Graph) -> CliResult<Decomposition> {
    match source {
        Some(GraphSource::Grid(h, w)) => Ok(decompose_grid(*h, *w)?),
        Some(GraphSource::Chain(t)) => Ok(decompose_line(*t)?),
        _ if is_undirected_line(graph) || graph.num_edges() == 0 && graph.num_nodes() == 1 => Ok(decompose_line(graph.num_nodes())?),
        _ => Err(CliError::Usage("decompose supports chain:<T>, line:<T>, grid:<H>x<W> or a line graph file".into())),
    }
}

pub fn cmd_decompose(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.require_f64()?;
    let graph = cfg.graph()?;
    let dec = decomposition_of(cfg.source.as_ref(), &graph)?;
    let dir = cfg.out.clone().ok_or_else(|| CliError::Usage("decompose needs --out <directory>".into()))?;
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
    let mut files = Vec::new();
    let mut total = 0;
    for (k, part) in dec.parts.iter().enumerate() {
        let mut file = GraphFile::from_graph(&part.graph);
        file.name = Some(part.name.clone());
        file.edge_map = Some(part.edge_map.clone());
        let path = dir.join(format!("part{k}-{}.json", part.name));
        formats::write_json(&path, &file)?;
        total += part.graph.num_edges();
        files.push(json!({ "file": path.file_name().map(|f| f.to_string_lossy().into_owned()), "name": part.name, "edges": part.graph.num_edges(), "diameter": part.plan.diameter() }));
    }
    let source_edges = dec.source.num_edges();
    let covered = dec.oriented_edges();
    let uncovered = dec.source.edges().iter().filter(|&&(a, b)| !covered.contains(&(a, b)) || !covered.contains(&(b, a))).count();
    let mut report = Report::new("decompose", cfg.echo(json!({})));
    report.push(Check::exactly("decompose.uncovered-orientations", uncovered as f64, 0.0));
    report.push(Check::exactly("decompose.distinct-oriented-edges", covered.len() as f64, (2 * source_edges) as f64));
    let unreached = unreached_pairs(&dec);
    report.push(Check::exactly("decompose.unreached-pairs", unreached as f64, 0.0));
    report.results = json!({
        "parts": files,
        "source_edges": source_edges,
        "distinct_oriented_edges": covered.len(),
        "part_edges_total": total,
    });
    Ok(Outcome { report, stdout: String::new() })
}

/// Ordered pairs `(s, t)` that no part connects by a directed path.
pub fn unreached_pairs(dec: &Decomposition) -> usize {
    let n = dec.source.num_nodes();
    let mut reach = vec![vec![false; n]; n];
    for part in &dec.parts {
        let r = suites::reachability(&part.graph);
        for (i, row) in r.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                reach[i][j] |= b;
            }
        }
    }
    reach.iter().flatten().filter(|&&b| !b).count()
}

pub fn cmd_forward(cfg: &RunConfig, args: &ForwardArgs) -> CliResult<Outcome> {
    cfg.require_f64()?;
    let graph = cfg.graph()?;
    let weights = match &args.weights {
        Some(path) => formats::load_mixer(path)?,
        None => {
            let mut rng = SeededRng::new(cfg.seed);
            let projection = ProjectionConfig {
                heads: cfg.heads,
                directed_variant: cfg.regime() == Regime::General && graph.is_directed(),
                ..ProjectionConfig::new(cfg.dmodel, cfg.dstate)
            };
            ProjectionWeights::init(projection, &mut rng)?
        }
    };
    let d = weights.config.d_model;
    let x = match graph.node_features() {
        Some(x) if x.cols() == d => x.clone(),
        Some(x) => {
            return Err(CliError::Usage(format!("graph node features have {} columns but the mixer expects {d}", x.cols())));
        }
        None => SeededRng::new(cfg.seed ^ 0xfea7).gaussian_matrix(graph.num_nodes(), d, 1.0),
    };
    if cfg.regime().is_dag() {
        plan_dag(&graph)?;
    }
    let algo = cfg.algorithm.unwrap_or(if cfg.regime().is_dag() { Algorithm::Recurrence } else { Algorithm::Dense });
    let mix = chimera_core::resolvent::MixConfig { gamma: cfg.gamma, ..chimera_core::resolvent::MixConfig::new(cfg.regime(), algo) };
    let y = chimera_forward(&graph, &x, graph.edge_features(), &weights, &mix)?.y;
    let mut report = Report::new("forward", cfg.echo(json!({ "algorithm": algo.to_string(), "weights": args.weights })));
    report.push(Check::exactly("forward.finite-output", f64::from(u8::from(y.is_finite())), 1.0));
    report.results = json!({ "output": TensorRecord::from(&y) });
    if let Some(path) = &args.save_weights {
        formats::save_mixer(path, &weights)?;
    }
    Ok(Outcome { report, stdout: String::new() })
}
