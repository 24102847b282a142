//! Invariant suites run by `verify` and `gradcheck`.
//!
//! Every check compares the library against something computed a different
//! way: walk enumeration, explicit reachability, closed-form chain products,
//! longest paths by memoized search, finite differences.

use chimera_core::grad::{max_relative_error, record_mixer, tape_finite_differences, GraphContext, MixerVars, Tape};
use chimera_core::graph::{path_sum_oracle, plan_dag};
use chimera_core::params::{build_adjacency, compute_params_with, line_sigma, ProjectionConfig, SsmParams};
use chimera_core::resolvent::{chimera_forward, mask_dense_capped, mask_squaring, neumann_sum, MixConfig};
use chimera_core::rng::SeededRng;
use chimera_core::{Algorithm, DagPlan, DenseMatrix, Graph, ProjectionWeights, Regime, WeightedAdjacency};

use crate::error::CliResult;
use crate::report::Check;

/// Largest instance the walk-enumeration oracle is run on.
pub const WALK_ORACLE_NODES: usize = 10;
pub const WALK_ORACLE_LENGTH: usize = 6;
/// Finite differences replay the whole tape once per scalar; keep it bounded.
pub const GRADCHECK_MAX_NODES: usize = 128;
pub const FD_STEP: f64 = 1e-5;
/// Coordinates where both gradients are below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;
pub const TRUNCATION_DEPTHS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub regime: Regime,
    pub algorithm: Option<Algorithm>,
    pub gamma: f64,
    pub d_model: usize,
    pub d_state: usize,
    pub heads: usize,
    pub seed: u64,
    pub grad_tol: f64,
}

impl SuiteConfig {
    pub fn projection(&self, graph: &Graph) -> ProjectionConfig {
        ProjectionConfig {
            heads: self.heads,
            directed_variant: self.regime == Regime::General && graph.is_directed(),
            ..ProjectionConfig::new(self.d_model, self.d_state)
        }
    }

    pub fn mix(&self, algorithm: Algorithm) -> MixConfig {
        MixConfig { gamma: self.gamma, dense_cap: usize::MAX, ..MixConfig::new(self.regime, algorithm) }
    }
}

/// Seeded features and weights for `graph`.
pub fn random_instance(graph: &Graph, cfg: &SuiteConfig) -> CliResult<(DenseMatrix, ProjectionWeights)> {
    let mut rng = SeededRng::new(cfg.seed);
    let weights = ProjectionWeights::init(cfg.projection(graph), &mut rng)?;
    let x = rng.gaussian_matrix(graph.num_nodes(), cfg.d_model, 1.0);
    Ok((x, weights))
}

pub fn matrix_rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        0.0
    } else {
        a.max_abs_diff(b) / scale
    }
}

fn inf_norm(m: &DenseMatrix) -> f64 {
    m.max_row_abs_sum()
}

/// `reach[i][j]`: node `j` reaches node `i` along arcs (including `i == j`).
pub fn reachability(graph: &Graph) -> Vec<Vec<bool>> {
    let n = graph.num_nodes();
    let out = graph.out_neighbors();
    let mut reach = vec![vec![false; n]; n];
    for s in 0..n {
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            if !reach[u][s] {
                reach[u][s] = true;
                stack.extend_from_slice(&out[u]);
            }
        }
    }
    reach
}

/// Longest directed path (in arcs) by memoized search over parents.
pub fn longest_path(graph: &Graph) -> usize {
    let parents = graph.conv_neighbors();
    let mut depth: Vec<Option<usize>> = vec![None; graph.num_nodes()];
    fn visit(v: usize, parents: &[Vec<usize>], depth: &mut [Option<usize>]) -> usize {
        if let Some(d) = depth[v] {
            return d;
        }
        let d = parents[v].iter().map(|&p| visit(p, parents, depth) + 1).max().unwrap_or(0);
        depth[v] = Some(d);
        d
    }
    (0..graph.num_nodes()).map(|v| visit(v, &parents, &mut depth)).max().unwrap_or(0)
}

/// Whether the edges are exactly `i → i+1` for every `i`.
pub fn is_forward_chain(graph: &Graph) -> bool {
    graph.is_directed()
        && graph.num_edges() + 1 == graph.num_nodes()
        && graph.edges().iter().enumerate().all(|(k, &e)| e == (k, k + 1))
}

/// `L[i][j] = Π_{k=j+1..=i} a_k` for a chain with gates `a_k = A[k][k-1]`.
pub fn chain_closed_form(adj: &WeightedAdjacency) -> DenseMatrix {
    let n = adj.num_nodes();
    DenseMatrix::from_fn(n, n, |i, j| if j > i { 0.0 } else { (j + 1..=i).map(|k| adj.weight(k, k - 1)).product() })
}

/// `max |(A^k)[i][j] - Σ_walks Π w|` over all pairs and `k ≤ max_len`.
pub fn walk_oracle_error(graph: &Graph, a: &DenseMatrix, max_len: usize) -> chimera_core::Result<f64> {
    let n = graph.num_nodes();
    let mut power = DenseMatrix::identity(n);
    let mut worst: f64 = 0.0;
    for k in 0..=max_len {
        if k > 0 {
            power = a.matmul(&power)?;
        }
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((power[(i, j)] - path_sum_oracle(graph, a, i, j, k)?).abs());
            }
        }
    }
    Ok(worst)
}

/// `‖(I-A)^-1 - Σ_{i≤k} Aⁱ‖_∞ - γ^{k+1}/(1-γ)`, maximized over `k ≤ depth`.
pub fn truncation_excess(a: &DenseMatrix, l: &DenseMatrix, gamma: f64, depth: usize) -> chimera_core::Result<f64> {
    let mut partial = DenseMatrix::identity(a.rows());
    let mut power = DenseMatrix::identity(a.rows());
    let mut worst = f64::NEG_INFINITY;
    for k in 0..=depth {
        if k > 0 {
            power = a.matmul(&power)?;
            partial.add_assign(&power)?;
        }
        let bound = gamma.powi(k as i32 + 1) / (1.0 - gamma);
        worst = worst.max(inf_norm(&l.sub(&partial)?) - bound);
    }
    Ok(worst)
}

/// Pairs where the support of `Σ_{i≤k} Aⁱ` (for `k ≥ dia`) and reachability
/// disagree, plus pairs outside the reachable set where `L` is not ~0.
pub fn support_mismatches(graph: &Graph, a: &DenseMatrix, l: &DenseMatrix) -> chimera_core::Result<usize> {
    let reach = reachability(graph);
    let truncated = neumann_sum(a, graph.diameter())?;
    let n = graph.num_nodes();
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            if (truncated[(i, j)] != 0.0) != reach[i][j] {
                bad += 1;
            }
            if !reach[i][j] && l[(i, j)].abs() > 1e-12 {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Largest `A_ij·A_ji + σ(Ψ)` over adjacent pairs of an undirected chain,
/// with `σ` of either endpoint.
pub fn line_budget_usage(adj: &WeightedAdjacency, psi: &[f64]) -> f64 {
    (1..adj.num_nodes())
        .map(|i| adj.weight(i, i - 1) * adj.weight(i - 1, i) + line_sigma(psi[i].max(psi[i - 1])))
        .fold(0.0, f64::max)
}

/// `(‖D L D⁻¹‖_max, 1/(1-2q))` where `D` symmetrizes the chain and
/// `q = max √(A_ij A_ji)`. The symmetrized chain has off-diagonal entries
/// at most `q`, so walks of length `m` contribute at most `(2q)^m`.
pub fn line_geometric_bound(adj: &WeightedAdjacency, l: &DenseMatrix) -> (f64, f64) {
    let n = adj.num_nodes();
    let mut scale = vec![1.0; n];
    let mut q: f64 = 0.0;
    for i in 1..n {
        let (down, up) = (adj.weight(i, i - 1), adj.weight(i - 1, i));
        q = q.max((down * up).sqrt());
        scale[i] = if up > 0.0 { scale[i - 1] * (down / up).sqrt() } else { scale[i - 1] };
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((l[(i, j)] * scale[j] / scale[i]).abs());
        }
    }
    (worst, 1.0 / (1.0 - 2.0 * q))
}

fn regime_checks(graph: &Graph, plan: Option<&DagPlan>, p: &SsmParams, cfg: &SuiteConfig, out: &mut Vec<Check>) -> CliResult<()> {
    let (adj, _) = build_adjacency(graph, plan, p, cfg.regime, cfg.gamma)?;
    let a = adj.to_dense();
    let l = mask_dense_capped(&adj, usize::MAX)?.l;
    match cfg.regime {
        Regime::General => {
            out.push(Check::below("banach.row-sum", adj.max_row_abs_sum(), cfg.gamma));
            out.push(Check::at_most("banach.resolvent-norm", inf_norm(&l), 1.0 / (1.0 - cfg.gamma) + 1e-9));
            out.push(Check::at_most("neumann.truncation-bound", truncation_excess(&a, &l, cfg.gamma, TRUNCATION_DEPTHS)?, 1e-12));
            out.push(Check::exactly("neumann.support", support_mismatches(graph, &a, &l)? as f64, 0.0));
        }
        Regime::Dag | Regime::DagNormalized => {
            let plan = plan.expect("DAG regimes are planned");
            let dia = plan.diameter();
            let nil = a.matrix_power(dia as u32 + 1)?;
            out.push(Check::exactly("dag.nilpotence", nil.max_abs(), 0.0));
            let series = neumann_sum(&a, dia)?;
            out.push(Check::at_most("dag.series-equals-inverse", series.max_abs_diff(&l), 1e-10));
            let squaring = mask_squaring(&adj, dia.max(1))?;
            let bound = 2 * (dia.max(1) as f64).log2().ceil() as usize + 2;
            out.push(Check::at_most("dag.squaring-matmuls", squaring.matmul_count as f64, bound as f64));
            out.push(Check::at_most("dag.squaring-equals-inverse", squaring.l.max_abs_diff(&l), 1e-10));
            if is_forward_chain(graph) {
                out.push(Check::at_most("line.closed-form-products", chain_closed_form(&adj).max_abs_diff(&l), 1e-12));
            }
        }
        Regime::UndirectedLine => {
            out.push(Check::at_most("line.cycle-budget", line_budget_usage(&adj, &p.psi), 0.25));
            let (measured, bound) = line_geometric_bound(&adj, &l);
            out.push(Check::at_most("line.resolvent-geometric-bound", if l.is_finite() { measured } else { f64::INFINITY }, bound + 1e-9));
        }
    }
    if graph.num_nodes() <= WALK_ORACLE_NODES {
        out.push(Check::at_most("path-sum.walk-enumeration", walk_oracle_error(graph, &a, WALK_ORACLE_LENGTH)?, 1e-12));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradOutcome {
    pub max_rel_err: f64,
    /// `max(|analytic|, |numeric|)` at the worst coordinate.
    pub worst_grad: f64,
    pub loss: f64,
    pub num_scalars: usize,
    /// Counted products in the resolvent backward, when the tape has one.
    pub inverse_matmuls: Option<usize>,
    pub replay_exact: bool,
}

/// Backward vs. central differences on `Σ Y²` for the full mixer.
pub fn gradcheck(graph: &Graph, cfg: &SuiteConfig, algorithm: Algorithm) -> CliResult<GradOutcome> {
    let (x, weights) = random_instance(graph, cfg)?;
    let ctx = GraphContext::new(graph, cfg.regime)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let vars = MixerVars::register(&mut tape, "mixer", &weights);
    let y = record_mixer(&mut tape, &ctx, xv, None, &vars, &cfg.mix(algorithm))?;
    let loss = tape.sum_squares(y)?;
    let analytic = tape.backward(loss)?.params(&tape);
    let inverse_matmuls = tape.backward_matmul_count().ok();
    let numeric = tape_finite_differences(&tape, loss, FD_STEP)?;
    let num_scalars = analytic.values().map(|g| g.rows() * g.cols()).sum();
    let max_rel_err = max_relative_error(&analytic, &numeric, GRAD_FLOOR);
    let worst_grad = analytic
        .iter()
        .flat_map(|(name, a)| a.as_slice().iter().zip(numeric[name].as_slice()))
        .map(|(&x, &y)| (x.abs().max(y.abs()), (x - y).abs()))
        .filter(|&(scale, _)| scale > GRAD_FLOOR)
        .find(|&(scale, diff)| diff / scale == max_rel_err)
        .map_or(0.0, |(scale, _)| scale);
    Ok(GradOutcome {
        max_rel_err,
        worst_grad,
        loss: tape.value(loss)[(0, 0)],
        num_scalars,
        inverse_matmuls,
        replay_exact: tape.replay_matches()?,
    })
}

/// Every invariant that applies to `graph` under `cfg.regime`.
pub fn verify(graph: &Graph, cfg: &SuiteConfig) -> CliResult<Vec<Check>> {
    let mut out = Vec::new();
    if let Some(algo) = cfg.algorithm {
        algo.check(cfg.regime)?;
    }
    let plan = if cfg.regime.is_dag() { Some(plan_dag(graph)?) } else { None };
    if let Some(plan) = &plan {
        let pos = plan.position();
        let backwards = graph.edges().iter().filter(|&&(s, d)| pos[s] >= pos[d]).count();
        out.push(Check::exactly("dag.topological-order", backwards as f64, 0.0));
        out.push(Check::exactly("dag.longest-path", plan.diameter() as f64, longest_path(graph) as f64));
    }
    let (x, weights) = random_instance(graph, cfg)?;
    let heads = compute_params_with(graph, &x, None, &weights)?;
    for p in &heads {
        regime_checks(graph, plan.as_ref(), p, cfg, &mut out)?;
    }

    let reference = chimera_forward(graph, &x, None, &weights, &cfg.mix(Algorithm::Dense))?.y;
    let mut algorithms = Vec::new();
    if cfg.regime.is_dag() {
        algorithms.extend([Algorithm::Recurrence, Algorithm::Squaring]);
    }
    if let Some(a) = cfg.algorithm {
        if !algorithms.contains(&a) && a != Algorithm::Dense {
            algorithms.push(a);
        }
    }
    for algo in algorithms {
        let name = format!("forward.{}-vs-dense", algo.name());
        let exact = match algo {
            Algorithm::Recurrence | Algorithm::Squaring => cfg.regime.is_dag(),
            Algorithm::Neumann(k) => plan.as_ref().is_some_and(|p| p.diameter() <= k),
            Algorithm::Dense => true,
        };
        if exact {
            let y = chimera_forward(graph, &x, None, &weights, &cfg.mix(algo))?.y;
            out.push(Check::at_most(name, matrix_rel_err(&y, &reference), 1e-9));
        } else {
            out.push(Check::skip(name, "truncated series; covered by neumann.truncation-bound"));
        }
    }

    if graph.num_nodes() <= GRADCHECK_MAX_NODES {
        let algo = cfg.algorithm.unwrap_or(Algorithm::Dense);
        let g = gradcheck(graph, cfg, algo)?;
        out.push(Check::below("grad.finite-difference", g.max_rel_err, cfg.grad_tol));
        out.push(Check::exactly("grad.replay-bit-exact", f64::from(u8::from(g.replay_exact)), 1.0));
        let dense = if algo == Algorithm::Dense { g } else { gradcheck(graph, cfg, Algorithm::Dense)? };
        let per_head = dense.inverse_matmuls.map_or(f64::NAN, |m| m as f64 / cfg.heads as f64);
        out.push(Check::exactly("grad.resolvent-backward-matmuls-per-head", per_head, 2.0));
    } else {
        out.push(Check::skip("grad.finite-difference", format!("more than {GRADCHECK_MAX_NODES} nodes")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chimera_core::graph::{grid_graph, line_graph};

    fn cfg(regime: Regime) -> SuiteConfig {
        SuiteConfig { regime, algorithm: None, gamma: 0.5, d_model: 3, d_state: 2, heads: 1, seed: 4, grad_tol: 1e-5 }
    }

    #[test]
    fn longest_path_and_reachability() {
        let g = Graph::new(5, true, &[(0, 1), (1, 2), (0, 3), (3, 4), (2, 4)]).unwrap();
        assert_eq!(longest_path(&g), 3);
        let r = reachability(&g);
        assert!(r[4][0] && r[2][0] && !r[0][4] && !r[3][1] && r[3][3]);
    }

    #[test]
    fn chain_detection() {
        assert!(is_forward_chain(&line_graph(6, true).unwrap()));
        assert!(!is_forward_chain(&line_graph(6, false).unwrap()));
        assert!(!is_forward_chain(&Graph::new(3, true, &[(1, 2), (0, 1)]).unwrap()));
    }

    #[test]
    fn every_regime_passes_its_suite() {
        let cases = [
            (line_graph(9, true).unwrap(), Regime::Dag),
            (line_graph(7, true).unwrap(), Regime::DagNormalized),
            (grid_graph(3, 3).unwrap(), Regime::General),
            (line_graph(8, false).unwrap(), Regime::UndirectedLine),
        ];
        for (g, regime) in cases {
            let checks = verify(&g, &cfg(regime)).unwrap();
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
            assert!(failed.is_empty(), "{regime:?}: {failed:?}");
            assert!(checks.iter().any(|c| c.name == "path-sum.walk-enumeration"));
        }
    }

    #[test]
    fn suite_catches_a_bad_truncation_bound() {
        // a row sum of 0.9 breaks the bound claimed for γ = 0.5
        let a = DenseMatrix::from_rows(&[vec![0.0, 0.9], vec![0.9, 0.0]]).unwrap();
        let l = a.identity_minus().unwrap().inverse().unwrap();
        assert!(truncation_excess(&a, &l, 0.5, 4).unwrap() > 0.0);
        assert!(truncation_excess(&a, &l, 0.9, 4).unwrap() <= 1e-12);
    }
}
