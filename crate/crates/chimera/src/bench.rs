//! Timing harness: median-of-repetitions timings, exact matmul counters and
//! log-log slope fits.

use std::hint::black_box;
use std::time::Instant;

use chimera_core::graph::plan_dag;
use chimera_core::params::{build_adjacency, SsmParams};
use chimera_core::resolvent::{
    default_depth, dag_recurrence, mask_dense_capped, mask_neumann_capped, mask_squaring, mix_dense,
    recurrence_kernel, RecurrenceInputs,
};
use chimera_core::rng::SeededRng;
use chimera_core::{Algorithm, DagPlan, DenseMatrix, Graph, Regime, WeightedAdjacency};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Smallest number of timed repetitions.
pub const MIN_REPS: usize = 5;
/// Each timed sample loops the workload until it spans at least this long,
/// so that microsecond-scale instances are not dominated by timer noise.
const MIN_SAMPLE_MS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn parse(token: &str) -> CliResult<Self> {
        match token {
            "f64" => Ok(Dtype::F64),
            "f32" => Ok(Dtype::F32),
            _ => Err(CliError::Usage(format!("unknown dtype `{token}` (expected one of: f64, f32)"))),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
        }
    }
}

/// Median per-call wall time in milliseconds over `reps` samples, after one
/// untimed warmup call.
pub fn median_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    let warm = Instant::now();
    f();
    let once = warm.elapsed().as_secs_f64() * 1e3;
    let inner = if once >= MIN_SAMPLE_MS { 1 } else { ((MIN_SAMPLE_MS / once.max(1e-6)).ceil() as usize).min(1 << 20) };
    let mut samples: Vec<f64> = (0..reps.max(MIN_REPS))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_secs_f64() * 1e3 / inner as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let m = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[m]
    } else {
        0.5 * (samples[m - 1] + samples[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// One mixing problem with everything but the mask computation prepared.
pub struct BenchInstance {
    pub graph: Graph,
    pub plan: Option<DagPlan>,
    pub adj: WeightedAdjacency,
    pub c: DenseMatrix,
    pub bbar: DenseMatrix,
    pub v: DenseMatrix,
    single: Option<SinglePrecision>,
}

struct SinglePrecision {
    weights: Vec<f32>,
    c: Vec<f32>,
    bbar: Vec<f32>,
    v: Vec<f32>,
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&x| x as f32).collect()
}

impl BenchInstance {
    /// Random selectivities and projections of state size `d` and value
    /// width `dv` on `graph`.
    pub fn random(graph: Graph, regime: Regime, gamma: f64, d: usize, dv: usize, seed: u64) -> CliResult<Self> {
        let n = graph.num_nodes();
        let mut rng = SeededRng::new(seed);
        let params = SsmParams {
            b: rng.gaussian_matrix(n, d, 1.0),
            c: rng.gaussian_matrix(n, d, 1.0),
            v: rng.gaussian_matrix(n, dv, 1.0),
            delta: (0..n).map(|_| rng.uniform(0.1, 2.0)).collect(),
            delta_src: None,
            psi: (0..n).map(|_| rng.normal()).collect(),
            edge_delta: None,
        };
        let plan = if regime.is_dag() { Some(plan_dag(&graph)?) } else { None };
        let (adj, bbar) = build_adjacency(&graph, plan.as_ref(), &params, regime, gamma)?;
        let c = params.c;
        let v = params.v;
        Ok(BenchInstance { graph, plan, adj, c, bbar, v, single: None })
    }

    /// Prepares single-precision copies of the recurrence inputs.
    pub fn with_f32(mut self) -> Self {
        self.single = Some(SinglePrecision {
            weights: to_f32(&self.adj.weights),
            c: to_f32(self.c.as_slice()),
            bbar: to_f32(self.bbar.as_slice()),
            v: to_f32(self.v.as_slice()),
        });
        self
    }

    /// Runs `algo` once; returns the number of dense matrix products used
    /// to build the mask.
    pub fn run(&self, algo: Algorithm, dtype: Dtype) -> CliResult<usize> {
        let cap = usize::MAX;
        match (algo, dtype) {
            (Algorithm::Recurrence, Dtype::F64) => {
                let plan = self.plan.as_ref().ok_or(chimera_core::Error::NotADag)?;
                black_box(dag_recurrence(plan, &self.adj, &self.c, &self.bbar, &self.v)?);
                Ok(0)
            }
            (Algorithm::Recurrence, Dtype::F32) => {
                let plan = self.plan.as_ref().ok_or(chimera_core::Error::NotADag)?;
                let s = self.single.as_ref().expect("with_f32 was called");
                let inputs = RecurrenceInputs { weights: &s.weights, c: &s.c, bbar: &s.bbar, v: &s.v, d: self.c.cols(), dv: self.v.cols() };
                let mut y = vec![0f32; self.graph.num_nodes() * self.v.cols()];
                recurrence_kernel(plan.topo_order(), &self.adj.layout, &inputs, &mut y, None);
                black_box(y);
                Ok(0)
            }
            (_, Dtype::F32) => Err(CliError::UnsupportedDtype),
            (Algorithm::Dense, _) => self.finish(mask_dense_capped(&self.adj, cap)?),
            (Algorithm::Squaring, _) => self.finish(mask_squaring(&self.adj, default_depth(&self.graph, self.plan.as_ref()))?),
            (Algorithm::Neumann(k), _) => self.finish(mask_neumann_capped(&self.adj, k, cap)?),
        }
    }

    fn finish(&self, mask: chimera_core::MaskMatrix) -> CliResult<usize> {
        black_box(mix_dense(&mask.l, &self.c, &self.bbar, &self.v)?);
        Ok(mask.matmul_count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Swept quantity: node count, or diameter for diameter sweeps.
    pub size: usize,
    pub algo: String,
    pub dtype: Dtype,
    pub wall_ms: f64,
    pub matmul_count: usize,
}

pub const CSV_HEADER: &str = "size,algo,dtype,wall_ms,matmul_count";

pub fn csv_line(row: &BenchRow) -> String {
    format!("{},{},{},{:.6},{}", row.size, row.algo, row.dtype.token(), row.wall_ms, row.matmul_count)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_line(r));
        out.push('\n');
    }
    out
}

/// Times `instance` under `algo`.
pub fn measure(instance: &BenchInstance, size: usize, algo: Algorithm, dtype: Dtype, reps: usize) -> CliResult<BenchRow> {
    let matmul_count = instance.run(algo, dtype)?;
    let mut failure = None;
    let wall_ms = median_ms(reps, || {
        if let Err(e) = instance.run(algo, dtype) {
            failure.get_or_insert(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(BenchRow { size, algo: algo.to_string(), dtype, wall_ms, matmul_count })
}

/// Runs `copies` independent recurrences on up to `threads` threads and
/// returns instances per second. Not used for scaling fits.
pub fn throughput(instance: &BenchInstance, copies: usize, threads: usize) -> CliResult<f64> {
    let threads = threads.clamp(1, copies.max(1));
    let start = Instant::now();
    let results: Vec<CliResult<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    for _ in (t..copies).step_by(threads) {
                        instance.run(Algorithm::Recurrence, Dtype::F64)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    results.into_iter().collect::<CliResult<Vec<()>>>()?;
    Ok(copies as f64 / start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chimera_core::graph::line_graph;

    #[test]
    fn slope_of_power_laws() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let cubic: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        assert!((loglog_slope(&xs, &cubic) - 3.0).abs() < 1e-12);
        let flat = [2.0; 5];
        assert_eq!(loglog_slope(&xs, &flat), 0.0);
    }

    #[test]
    fn median_calls_workload() {
        let mut calls = 0;
        let ms = median_ms(5, || calls += 1);
        assert!(ms >= 0.0);
        assert!(calls >= 6);
    }

    #[test]
    fn dtype_dispatch() {
        let inst = BenchInstance::random(line_graph(50, true).unwrap(), Regime::Dag, 0.5, 4, 3, 9).unwrap().with_f32();
        assert_eq!(inst.run(Algorithm::Recurrence, Dtype::F32).unwrap(), 0);
        assert_eq!(inst.run(Algorithm::Squaring, Dtype::F64).unwrap(), 12);
        assert!(matches!(inst.run(Algorithm::Dense, Dtype::F32), Err(CliError::UnsupportedDtype)));
        assert!(throughput(&inst, 8, 3).unwrap() > 0.0);
    }

    #[test]
    fn csv_layout() {
        let row = BenchRow { size: 1024, algo: "neumann:4".into(), dtype: Dtype::F64, wall_ms: 0.5, matmul_count: 4 };
        assert_eq!(to_csv(&[row]), "size,algo,dtype,wall_ms,matmul_count\n1024,neumann:4,f64,0.500000,4\n");
    }
}
