//! Acceptance suite: thirteen property/oracle criteria, one PASS/FAIL line
//! each. Run with `cargo test -p chimera --test acceptance`.
//!
//! A criterion passes only if its measurement is within tolerance *and* it
//! finished inside its time budget. Criteria listed in `KNOWN_FAILURES` are
//! still run and reported as FAIL; they just don't turn the exit status red.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chimera::bench::{loglog_slope, measure, BenchInstance, Dtype};
use chimera::commands::unreached_pairs;
use chimera::core::graph::{decompose_grid, decompose_line, grid_graph, line_graph, plan_dag};
use chimera::core::layer::{default_model_config, train, Optimizer, SharingMode, Structure, SyntheticTask, TaskKind, TrainConfig};
use chimera::core::params::{build_adjacency, softplus, SsmParams};
use chimera::core::resolvent::{dag_recurrence, default_depth, mask_dense_capped, mask_squaring, mix_dense, neumann_sum};
use chimera::core::rng::SeededRng;
use chimera::core::{Algorithm, Decomposition, DenseMatrix, Graph, Regime, WeightedAdjacency};
use chimera::formats::read_json;
use chimera::report::Report;
use chimera::source::{dag_with_diameter, random_dag, random_graph};
use chimera::suites::{
    chain_closed_form, gradcheck, line_budget_usage, line_geometric_bound, matrix_rel_err, support_mismatches,
    truncation_excess, walk_oracle_error, SuiteConfig, FD_STEP, TRUNCATION_DEPTHS,
};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

/// Criteria that cannot hold as stated:
///
/// - 7: at a root node `h = Bv`, so `Var(Cᵀh) = d ≥ 4`.
/// - 8: with ε = 1e-5 a central difference of an `O(1)` f64 loss resolves
///   about 1e-11 absolute, which is above 1e-5 relative for the smallest
///   gradients the 1e-8 floor admits.
const KNOWN_FAILURES: &[usize] = &[7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Res<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn random_params(rng: &mut SeededRng, graph: &Graph, d: usize, dv: usize) -> SsmParams {
    let n = graph.num_nodes();
    SsmParams {
        b: rng.gaussian_matrix(n, d, 1.0),
        c: rng.gaussian_matrix(n, d, 1.0),
        v: rng.gaussian_matrix(n, dv, 1.0),
        delta: (0..n).map(|_| softplus(rng.normal())).collect(),
        delta_src: None,
        psi: (0..n).map(|_| rng.normal()).collect(),
        edge_delta: None,
    }
}

fn adjacency(graph: &Graph, p: &SsmParams, regime: Regime, gamma: f64) -> Res<(WeightedAdjacency, DenseMatrix)> {
    let plan = if regime.is_dag() { Some(plan_dag(graph)?) } else { None };
    Ok(build_adjacency(graph, plan.as_ref(), p, regime, gamma)?)
}

/// 1. Dense resolvent of a forward chain equals the closed-form gate products.
fn line_graph_equivalence() -> Res<Outcome> {
    let mut rng = SeededRng::new(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.int_inclusive(2, 256);
        let graph = line_graph(n, true)?;
        let arcs: Vec<(usize, usize, f64)> = (1..n).map(|k| (k, k - 1, rng.uniform(0.0, 1.0))).collect();
        let adj = WeightedAdjacency::from_weights(n, &arcs, Regime::Dag, Some(plan_dag(&graph)?))?;
        let l = mask_dense_capped(&adj, usize::MAX)?.l;
        worst = worst.max(l.max_abs_diff(&chain_closed_form(&adj)));
    }
    outcome(worst <= 1e-12, format!("max |L - Π a| = {worst:.2e} (tol 1e-12)"))
}

/// 2. Matrix powers equal explicit walk enumeration.
fn path_sum_oracle() -> Res<Outcome> {
    let mut rng = SeededRng::new(202);
    let mut worst: f64 = 0.0;
    for g in 0..30 {
        let n = rng.int_inclusive(2, 10);
        let p = rng.uniform(0.2, 0.7);
        let graph = if g % 2 == 0 { random_graph(n, p, rng.next_u64())? } else { random_dag(n, p, rng.next_u64())? };
        let a = graph.weighted_adjacency(|_| rng.uniform(-1.0, 1.0));
        worst = worst.max(walk_oracle_error(&graph, &a, 6)?);
    }
    outcome(worst <= 1e-12, format!("max |A^k - walks| = {worst:.2e} over k ≤ 6 (tol 1e-12)"))
}

/// 3. DAG adjacencies are nilpotent and the finite series is the inverse.
fn nilpotence() -> Res<Outcome> {
    let mut rng = SeededRng::new(303);
    let (mut worst_power, mut worst_series): (f64, f64) = (0.0, 0.0);
    for g in 0..50 {
        let n = rng.int_inclusive(2, 64);
        let graph = random_dag(n, rng.uniform(0.05, 0.4), rng.next_u64())?;
        let regime = if g % 2 == 0 { Regime::Dag } else { Regime::DagNormalized };
        let p = random_params(&mut rng, &graph, 4, 2);
        let (adj, _) = adjacency(&graph, &p, regime, 0.5)?;
        let dia = adj.plan.as_ref().expect("planned").diameter();
        let a = adj.to_dense();
        worst_power = worst_power.max(a.matrix_power(dia as u32 + 1)?.max_abs());
        let l = mask_dense_capped(&adj, usize::MAX)?.l;
        worst_series = worst_series.max(neumann_sum(&a, dia)?.max_abs_diff(&l));
    }
    outcome(
        worst_power == 0.0 && worst_series <= 1e-10,
        format!("max |A^(dia+1)| = {worst_power:e} (exact 0), max |Σ A^i - L| = {worst_series:.2e} (tol 1e-10)"),
    )
}

/// 4. Recurrence, dense inverse and squaring agree on random DAGs.
fn cross_algorithm() -> Res<Outcome> {
    let mut rng = SeededRng::new(404);
    let mut worst: f64 = 0.0;
    for g in 0..100 {
        let n = rng.int_inclusive(2, 128);
        let graph = random_dag(n, rng.uniform(0.02, 0.2), rng.next_u64())?;
        let (d, dv) = (rng.int_inclusive(1, 16), rng.int_inclusive(1, 8));
        let regime = if g % 2 == 0 { Regime::Dag } else { Regime::DagNormalized };
        let p = random_params(&mut rng, &graph, d, dv);
        let (adj, bbar) = adjacency(&graph, &p, regime, 0.5)?;
        let plan = adj.plan.clone().expect("planned");
        let rec = dag_recurrence(&plan, &adj, &p.c, &bbar, &p.v)?.y;
        let dense = mix_dense(&mask_dense_capped(&adj, usize::MAX)?.l, &p.c, &bbar, &p.v)?;
        let sq = mix_dense(&mask_squaring(&adj, default_depth(&graph, Some(&plan)))?.l, &p.c, &bbar, &p.v)?;
        worst = worst.max(matrix_rel_err(&rec, &dense)).max(matrix_rel_err(&rec, &sq)).max(matrix_rel_err(&dense, &sq));
    }
    outcome(worst < 1e-9, format!("max pairwise relative error {worst:.2e} (tol 1e-9)"))
}

fn general_graph(rng: &mut SeededRng, i: usize, max_nodes: usize) -> Res<Graph> {
    let n = rng.int_inclusive(2, max_nodes);
    let p = rng.uniform(0.05, 0.6);
    Ok(if i.is_multiple_of(2) { random_graph(n, p, rng.next_u64())? } else { random_dag(n, p, rng.next_u64())? })
}

/// 5. Row normalization keeps every row sum below γ and bounds the resolvent.
fn banach() -> Res<Outcome> {
    let mut rng = SeededRng::new(505);
    let (mut row_margin, mut norm_excess) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..200 {
        let graph = general_graph(&mut rng, i, 48)?;
        let p = random_params(&mut rng, &graph, 4, 2);
        for gamma in [0.25, 0.5, 0.9] {
            let (adj, _) = adjacency(&graph, &p, Regime::General, gamma)?;
            row_margin = row_margin.min(gamma - adj.max_row_abs_sum());
            let l = mask_dense_capped(&adj, usize::MAX)?.l;
            norm_excess = norm_excess.max(l.max_row_abs_sum() - 1.0 / (1.0 - gamma));
        }
    }
    outcome(
        row_margin > 0.0 && norm_excess <= 1e-9,
        format!("min (γ - row sum) = {row_margin:.3e} (> 0), max ‖L‖∞ - 1/(1-γ) = {norm_excess:.3e} (≤ 1e-9)"),
    )
}

/// 6. Truncated series obey the geometric tail bound; support is exact at dia.
fn truncation() -> Res<Outcome> {
    let mut rng = SeededRng::new(606);
    let (mut excess, mut mismatches) = (f64::NEG_INFINITY, 0usize);
    for i in 0..20 {
        let graph = general_graph(&mut rng, i, 32)?;
        let gamma = [0.25, 0.5, 0.9][i % 3];
        let p = random_params(&mut rng, &graph, 4, 2);
        let (adj, _) = adjacency(&graph, &p, Regime::General, gamma)?;
        let a = adj.to_dense();
        let l = mask_dense_capped(&adj, usize::MAX)?.l;
        excess = excess.max(truncation_excess(&a, &l, gamma, TRUNCATION_DEPTHS)?);
        mismatches += support_mismatches(&graph, &a, &l)?;
    }
    outcome(
        excess <= 1e-12 && mismatches == 0,
        format!("max ‖L - L̂_k‖∞ - γ^(k+1)/(1-γ) = {excess:.3e} over k ≤ 16, support mismatches {mismatches}"),
    )
}

/// 7. Sample `Var(C_iᵀh_i)` of the normalized recurrence against `1 + 3·SE`.
///
/// `B_i v_i` and `C_i` are drawn i.i.d. from `N(0, I_d)`.
fn variance_bound() -> Res<Outcome> {
    const DRAWS: usize = 100_000;
    let mut rng = SeededRng::new(707);
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0usize);
    for g in 0..10 {
        let n = rng.int_inclusive(2, 32);
        let d = [4, 8, 16][g % 3];
        let graph = random_dag(n, rng.uniform(0.1, 0.5), rng.next_u64())?;
        let plan = plan_dag(&graph)?;
        let mut p = random_params(&mut rng, &graph, d, 1);
        p.b = DenseMatrix::filled(n, d, 1.0);
        let (adj, ones) = build_adjacency(&graph, Some(&plan), &p, Regime::DagNormalized, 0.5)?;
        // B̄ = diag(s)·B, so a unit B exposes the per-node input scale s.
        let scale: Vec<f64> = (0..n).map(|i| ones[(i, 0)]).collect();
        let v = DenseMatrix::filled(n, 1, 1.0);
        let (mut sum, mut sum2, mut sum4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut samples = vec![vec![0.0; DRAWS]; n];
        for k in 0..DRAWS {
            let bv = rng.gaussian_matrix(n, d, 1.0);
            let c = rng.gaussian_matrix(n, d, 1.0);
            let bbar = DenseMatrix::from_fn(n, d, |i, j| scale[i] * bv[(i, j)]);
            let y = dag_recurrence(&plan, &adj, &c, &bbar, &v)?.y;
            for i in 0..n {
                samples[i][k] = y[(i, 0)];
                sum[i] += y[(i, 0)];
            }
        }
        for i in 0..n {
            let mean = sum[i] / DRAWS as f64;
            for &s in &samples[i] {
                let c2 = (s - mean) * (s - mean);
                sum2[i] += c2;
                sum4[i] += c2 * c2;
            }
            let var = sum2[i] / (DRAWS as f64 - 1.0);
            let m4 = sum4[i] / DRAWS as f64;
            let se = ((m4 - var * var).max(0.0) / DRAWS as f64).sqrt();
            let excess = var - (1.0 + 3.0 * se);
            if excess > worst.0 {
                worst = (excess, var, se, d);
            }
        }
    }
    let (excess, var, se, d) = worst;
    outcome(excess <= 0.0, format!("worst node: Var(Cᵀh) = {var:.3} vs 1 + 3·SE = {:.3} (d = {d})", 1.0 + 3.0 * se))
}

/// 8. Backward matches central differences for every regime × algorithm.
fn gradients() -> Res<Outcome> {
    let regimes = [Regime::General, Regime::Dag, Regime::DagNormalized, Regime::UndirectedLine];
    let algorithms = [Algorithm::Dense, Algorithm::Recurrence, Algorithm::Squaring, Algorithm::Neumann(3)];
    let (mut worst, mut combos, mut bad_counts) = (0.0f64, 0usize, 0usize);
    let (mut worst_at, mut resolution) = (String::new(), String::new());
    for regime in regimes {
        for algo in algorithms.iter().copied().filter(|a| a.supports(regime)) {
            for t in [4, 8, 16] {
                for seed in 0..20u64 {
                    let graph = match regime {
                        Regime::UndirectedLine => line_graph(t, false)?,
                        Regime::General if seed % 2 == 0 => random_graph(t, 0.4, seed)?,
                        _ => random_dag(t, 0.4, seed)?,
                    };
                    let cfg = SuiteConfig { regime, algorithm: Some(algo), gamma: 0.5, d_model: 4, d_state: 4, heads: 1, seed, grad_tol: 1e-5 };
                    let g = gradcheck(&graph, &cfg, algo)?;
                    if g.max_rel_err > worst {
                        worst = g.max_rel_err;
                        worst_at = format!("{} {} T={t} seed={seed}", regime.token(), algo);
                        // A central difference of an f64 loss cannot resolve
                        // finer than ulp(f)/2ε relative to the gradient.
                        let floor = f64::EPSILON * g.loss.abs() / (2.0 * FD_STEP * g.worst_grad);
                        resolution = format!("|grad| {:.1e}, f64 difference resolution {floor:.1e}", g.worst_grad);
                    }
                    if algo == Algorithm::Dense && g.inverse_matmuls != Some(2) {
                        bad_counts += 1;
                    }
                    combos += 1;
                }
            }
        }
    }
    outcome(
        worst < 1e-5 && bad_counts == 0,
        format!("{combos} runs, max relative error {worst:.2e} ({worst_at}; {resolution}), resolvent backward ≠ 2 matmuls: {bad_counts}"),
    )
}

/// 9. Recurrence time is linear in T; squaring uses logarithmically many products.
fn complexity() -> Res<Outcome> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for e in 10..=16 {
        let n = 1usize << e;
        let inst = BenchInstance::random(line_graph(n, true)?, Regime::Dag, 0.5, 16, 8, e as u64)?;
        let row = measure(&inst, n, Algorithm::Recurrence, Dtype::F64, 5)?;
        xs.push(n as f64);
        ys.push(row.wall_ms);
    }
    let slope = loglog_slope(&xs, &ys);
    let mut over = Vec::new();
    for e in 2..=8 {
        let dia = 1usize << e;
        let inst = BenchInstance::random(dag_with_diameter(300, dia)?, Regime::Dag, 0.5, 4, 4, dia as u64)?;
        let count = inst.run(Algorithm::Squaring, Dtype::F64)?;
        let bound = 2 * (dia as f64).log2().ceil() as usize + 2;
        if count > bound {
            over.push(format!("dia {dia}: {count} > {bound}"));
        }
    }
    outcome(
        (0.9..=1.15).contains(&slope) && over.is_empty(),
        format!("recurrence slope {slope:.3} over 2^10..2^16 (range [0.9, 1.15]); squaring over bound: {over:?}"),
    )
}

fn uncovered_edges(dec: &Decomposition) -> usize {
    let mut covered = vec![false; dec.source.num_edges()];
    for part in &dec.parts {
        for &e in &part.edge_map {
            covered[e] = true;
        }
    }
    covered.iter().filter(|&&c| !c).count()
}

/// 10. Decompositions cover every edge and (for grids) every ordered pair.
fn decomposition_coverage() -> Res<Outcome> {
    let (mut uncovered, mut unreached, mut cyclic) = (0, 0, 0);
    for t in 2..=64 {
        let dec = decompose_line(t)?;
        uncovered += uncovered_edges(&dec);
        unreached += unreached_pairs(&dec);
    }
    for h in 1..=8 {
        for w in 1..=8 {
            let dec = decompose_grid(h, w)?;
            assert_eq!(dec.source.edges(), grid_graph(h, w)?.edges());
            uncovered += uncovered_edges(&dec);
            unreached += unreached_pairs(&dec);
            cyclic += dec.parts.iter().filter(|p| plan_dag(&p.graph).is_err()).count();
        }
    }
    outcome(
        uncovered == 0 && unreached == 0 && cyclic == 0,
        format!("uncovered edges {uncovered}, unreached ordered pairs {unreached}, cyclic parts {cyclic}"),
    )
}

/// 11. Undirected-line rescaling respects the cycle budget and bounds L.
fn undirected_line() -> Res<Outcome> {
    let mut rng = SeededRng::new(1111);
    let (mut usage, mut ratio, mut non_finite): (f64, f64, usize) = (0.0, 0.0, 0);
    for _ in 0..100 {
        let n = rng.int_inclusive(2, 64);
        let graph = line_graph(n, false)?;
        let mut p = random_params(&mut rng, &graph, 4, 2);
        // Small selectivities push raw gates towards 1, so the rescale is active.
        let spread = rng.uniform(0.01, 3.0);
        p.delta.iter_mut().for_each(|x| *x *= spread);
        p.psi.iter_mut().for_each(|x| *x *= 3.0);
        let (adj, _) = adjacency(&graph, &p, Regime::UndirectedLine, 0.5)?;
        usage = usage.max(line_budget_usage(&adj, &p.psi));
        let l = mask_dense_capped(&adj, usize::MAX)?.l;
        if !l.is_finite() {
            non_finite += 1;
            continue;
        }
        let (measured, bound) = line_geometric_bound(&adj, &l);
        ratio = ratio.max(measured / bound);
    }
    outcome(
        usage <= 0.25 && non_finite == 0 && ratio <= 1.0 + 1e-9,
        format!("max A_ij·A_ji + σ(Ψ) = {usage:.6} (≤ 0.25), max ‖DLD⁻¹‖_max / (1/(1-2q)) = {ratio:.4}, non-finite {non_finite}"),
    )
}

fn train_cli(dir: &Path, name: &str, args: &[&str]) -> Res<Report> {
    let out = dir.join(name);
    let run = Command::new(env!("CARGO_BIN_EXE_chimera")).arg("train").args(args).arg("--out").arg(&out).output()?;
    if !out.exists() {
        return Err(format!("train wrote no report: {}", String::from_utf8_lossy(&run.stderr)).into());
    }
    Ok(read_json(&out)?)
}

/// 12. The CLI training run reaches the recorded bar; lr = 0 is exactly flat.
fn trainability() -> Res<Outcome> {
    let golden: serde_json::Value = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/train_path_sum.json"))?;
    let dir = tempfile::tempdir()?;
    let seed = golden["seed"].to_string();
    let report = train_cli(dir.path(), "run.json", &["--task", "path-sum", "--graph", "chain:64", "--steps", "2000", "--seed", &seed])?;
    let val = report.results["val_mse"].as_f64().ok_or("val_mse missing")?;
    let var = report.results["target_variance"].as_f64().ok_or("target_variance missing")?;
    let expected = golden["val_mse"].as_f64().ok_or("golden val_mse missing")?;
    let drift = (val - expected).abs() / expected;
    let flat = train_cli(dir.path(), "flat.json", &["--task", "path-sum", "--graph", "chain:64", "--steps", "50", "--lr", "0", "--seed", &seed])?;
    let losses: Vec<f64> = flat.results["losses"].as_array().ok_or("losses missing")?.iter().filter_map(|v| v.as_f64()).collect();
    let is_flat = losses.len() == 51 && losses.iter().all(|&l| l == losses[0]);
    outcome(
        val / var < 0.1 && drift < 1e-6 && is_flat,
        format!("val MSE / target variance = {:.3e} (< 0.1), drift from recorded run {drift:.1e}, lr=0 flat: {is_flat}", val / var),
    )
}

/// 13. On grid averaging: 4-part grid DAGs < bidirectional chain < forward chain.
fn structure_ablation() -> Res<Outcome> {
    let kind = TaskKind::GridAverage { height: 6, width: 6 };
    let mut ordered = 0;
    let mut rows = Vec::new();
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let mut val = Vec::new();
        let mut params = Vec::new();
        for structure in [Structure::Decomposed, Structure::BidirectionalChain, Structure::ForwardChain] {
            let mut task = SyntheticTask::new(kind, structure);
            task.regime = Regime::DagNormalized;
            task.sharing = SharingMode::Complete;
            let config = TrainConfig {
                steps: 1000,
                optimizer: Optimizer::adam(0.01),
                train_samples: 32,
                val_samples: 32,
                seed,
                model: default_model_config(&task, Algorithm::Recurrence),
            };
            let (_, r) = train(&task, &config)?;
            val.push(r.val_mse);
            params.push(r.num_parameters);
        }
        if val[0] < val[1] && val[1] < val[2] && params.iter().all(|&p| p == params[0]) {
            ordered += 1;
        }
        rows.push(format!("seed {seed}: {:.4} < {:.4} < {:.4}", val[0], val[1], val[2]));
    }
    outcome(ordered == seeds.len(), format!("{ordered}/{} seeds ordered; {}", seeds.len(), rows.join("; ")))
}

type Criterion = (usize, &'static str, Duration, fn() -> Res<Outcome>);

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 13] = [
        (1, "line-graph equivalence", secs(10), line_graph_equivalence),
        (2, "path-sum oracle", secs(30), path_sum_oracle),
        (3, "nilpotence", secs(20), nilpotence),
        (4, "cross-algorithm equivalence", secs(60), cross_algorithm),
        (5, "banach normalization", secs(30), banach),
        (6, "truncation bound", secs(30), truncation),
        (7, "variance bound", secs(120), variance_bound),
        (8, "gradient correctness", secs(180), gradients),
        (9, "complexity scaling", secs(180), complexity),
        (10, "decomposition coverage", secs(20), decomposition_coverage),
        (11, "undirected-line constraint", secs(10), undirected_line),
        (12, "trainability", secs(300), trainability),
        (13, "structure ablation direction", secs(900), structure_ablation),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut passed, mut unexpected, mut ran) = (0, Vec::new(), 0);
    for (id, name, budget, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = format!("{:.1}s / {}s", elapsed.as_secs_f64(), budget.as_secs());
        println!("{} {id:>2} {name:<30} {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
        if pass {
            passed += 1;
        } else if !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    println!("{passed}/{ran} criteria passed; unexpected failures: {unexpected:?}; known failures: {KNOWN_FAILURES:?}");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
