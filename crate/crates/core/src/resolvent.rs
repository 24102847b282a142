//! Mask construction and mixing: `Y = (L ⊙ C B̄ᵀ) V` with `L = (I - A)^-1`.
//!
//! Four ways to get there:
//!
//! * dense LU inverse — exact, `O(T³)`;
//! * the squaring product `(I + A)(I + A²)(I + A⁴)⋯` — exact on DAGs once the
//!   largest power reaches the longest path, `O(log dia)` products;
//! * a plain truncated Neumann sum — the slow reference for squaring;
//! * the DAG recurrence — never materializes `L`, `O((|V| + |E|)·d·D)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::graph::{plan_dag, DagPlan, Decomposition, Graph};
use crate::linalg::{DenseMatrix, Real};
use crate::params::{build_adjacency, compute_params_with, ArcLayout, ProjectionWeights, Regime, SsmParams, WeightedAdjacency};

/// Largest `T` for which `L` may be materialized by default.
pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Dense,
    Recurrence,
    Squaring,
    Neumann(usize),
}

impl Algorithm {
    pub const TOKENS: &'static str = "dense, recurrence, squaring, neumann:<k>";

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "dense" => Ok(Algorithm::Dense),
            "recurrence" => Ok(Algorithm::Recurrence),
            "squaring" => Ok(Algorithm::Squaring),
            _ => token
                .strip_prefix("neumann:")
                .and_then(|k| k.parse().ok())
                .map(Algorithm::Neumann)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{token}` (expected one of: {})", Self::TOKENS))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dense => "dense",
            Algorithm::Recurrence => "recurrence",
            Algorithm::Squaring => "squaring",
            Algorithm::Neumann(_) => "neumann",
        }
    }

    /// Whether `regime` can be evaluated with this algorithm.
    pub fn supports(self, regime: Regime) -> bool {
        !matches!(self, Algorithm::Recurrence) || regime.is_dag()
    }

    pub fn check(self, regime: Regime) -> Result<()> {
        if self.supports(regime) {
            Ok(())
        } else {
            Err(Error::UnsupportedCombination { regime: regime.token(), algorithm: self.name() })
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Neumann(k) => write!(f, "neumann:{k}"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMethod {
    DenseInverse,
    /// Implicit mask of the recurrence; never materialized.
    DagRecurrence,
    Squaring { k_max: usize },
    Neumann { k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub l: DenseMatrix,
    pub method: MaskMethod,
    /// `true` when `l` equals the resolvent up to rounding.
    pub exact: bool,
    /// `T×T` products spent building `l`.
    pub matmul_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutput {
    /// `T×D`
    pub y: DenseMatrix,
    /// Per-head hidden states from the recurrence (`T` entries of `d×D_head`).
    pub hidden: Option<Vec<Vec<DenseMatrix>>>,
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::DenseCapExceeded { num_nodes: n, cap })
    } else {
        Ok(())
    }
}

pub fn mask_dense(adj: &WeightedAdjacency) -> Result<MaskMatrix> {
    mask_dense_capped(adj, DEFAULT_DENSE_CAP)
}

pub fn mask_dense_capped(adj: &WeightedAdjacency, cap: usize) -> Result<MaskMatrix> {
    check_cap(adj.num_nodes(), cap)?;
    let l = adj.to_dense().identity_minus()?.inverse()?;
    Ok(MaskMatrix { l, method: MaskMethod::DenseInverse, exact: true, matmul_count: 0 })
}

/// Smallest power of two `≥ k`.
pub fn squaring_power(k_max: usize) -> usize {
    k_max.max(1).next_power_of_two()
}

/// `(I + A)(I + A²)⋯(I + A^p)` with `p` the smallest power of two `≥ k_max`,
/// which is `Σ_{i=0}^{2p-1} Aⁱ`. Returns the product and the number of
/// matrix multiplications used (`2·log₂ p`).
pub fn squaring_product(a: &DenseMatrix, k_max: usize) -> Result<(DenseMatrix, usize)> {
    let p = squaring_power(k_max);
    let mut acc = a.identity_plus()?;
    let mut power = a.clone();
    let mut count = 0;
    let mut reached = 1;
    while reached < p {
        power = power.matmul(&power)?;
        acc = acc.matmul(&power.identity_plus()?)?;
        count += 2;
        reached *= 2;
    }
    Ok((acc, count))
}

pub fn mask_squaring(adj: &WeightedAdjacency, k_max: usize) -> Result<MaskMatrix> {
    let (l, matmul_count) = squaring_product(&adj.to_dense(), k_max)?;
    let terms = 2 * squaring_power(k_max);
    let exact = adj.weights.iter().all(|&w| w == 0.0) || adj.plan.as_ref().is_some_and(|p| p.nilpotency_index() <= terms);
    Ok(MaskMatrix { l, method: MaskMethod::Squaring { k_max }, exact, matmul_count })
}

/// `Σ_{i=0}^{k} Aⁱ` by Horner's rule (`k` products).
pub fn neumann_sum(a: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    let mut l = DenseMatrix::identity(a.rows());
    for _ in 0..k {
        l = a.matmul(&l)?.identity_plus()?;
    }
    Ok(l)
}

pub fn mask_neumann(adj: &WeightedAdjacency, k: usize) -> Result<MaskMatrix> {
    mask_neumann_capped(adj, k, DEFAULT_DENSE_CAP)
}

pub fn mask_neumann_capped(adj: &WeightedAdjacency, k: usize, cap: usize) -> Result<MaskMatrix> {
    check_cap(adj.num_nodes(), cap)?;
    let l = neumann_sum(&adj.to_dense(), k)?;
    let exact = adj.weights.iter().all(|&w| w == 0.0) || adj.plan.as_ref().is_some_and(|p| p.diameter() <= k);
    Ok(MaskMatrix { l, method: MaskMethod::Neumann { k }, exact, matmul_count: k })
}

/// `Y = (L ⊙ C B̄ᵀ) V`.
pub fn mix_output(mask: &MaskMatrix, c: &DenseMatrix, bbar: &DenseMatrix, v: &DenseMatrix) -> Result<MixOutput> {
    Ok(MixOutput { y: mix_dense(&mask.l, c, bbar, v)?, hidden: None })
}

pub fn mix_dense(l: &DenseMatrix, c: &DenseMatrix, bbar: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    let t = l.rows();
    if !l.is_square() || c.rows() != t || bbar.rows() != t || v.rows() != t {
        return Err(Error::ShapeMismatch { op: "mix_output", left: l.shape(), right: (c.rows(), v.rows()) });
    }
    if c.cols() != bbar.cols() {
        return Err(Error::ShapeMismatch { op: "mix_output", left: c.shape(), right: bbar.shape() });
    }
    let m = l.hadamard(&c.matmul(&bbar.transpose())?)?;
    m.matmul(v)
}

/// Scratch space for hidden states whose consumers have not all run yet.
struct SlotPool<R> {
    width: usize,
    data: Vec<R>,
    free: Vec<usize>,
    slots: usize,
}

impl<R: Real> SlotPool<R> {
    fn new(width: usize) -> Self {
        SlotPool { width, data: Vec::new(), free: Vec::new(), slots: 0 }
    }

    fn take(&mut self) -> usize {
        if let Some(s) = self.free.pop() {
            s
        } else {
            self.data.resize(self.data.len() + self.width, R::ZERO);
            self.slots += 1;
            self.slots - 1
        }
    }
}

/// Flat inputs of the recurrence kernel, row-major.
pub struct RecurrenceInputs<'a, R> {
    /// Arc weights in `layout` order.
    pub weights: &'a [R],
    /// `T×d`
    pub c: &'a [R],
    /// `T×d`
    pub bbar: &'a [R],
    /// `T×D`
    pub v: &'a [R],
    pub d: usize,
    pub dv: usize,
}

/// `h_i = Σ_{j∈p(i)} A_ij h_j + B̄_i v_iᵀ`, `y_i = C_iᵀ h_i` in topological
/// order. Hidden states live in a pool and are recycled once the last child
/// has read them, so memory tracks the frontier rather than `T`. When
/// `keep` is given, every state is copied into it (`T·d·D` values).
pub fn recurrence_kernel<R: Real>(
    order: &[usize],
    layout: &ArcLayout,
    inputs: &RecurrenceInputs<'_, R>,
    y: &mut [R],
    mut keep: Option<&mut Vec<R>>,
) {
    let (d, dv) = (inputs.d, inputs.dv);
    let n = layout.num_nodes;
    let width = d * dv;
    let mut pending = vec![0u32; n];
    for &s in &layout.src {
        pending[s] += 1;
    }
    let mut slot_of = vec![usize::MAX; n];
    let mut pool = SlotPool::<R>::new(width);
    if let Some(k) = keep.as_deref_mut() {
        k.clear();
        k.resize(n * width, R::ZERO);
    }
    for &i in order {
        let slot = pool.take();
        slot_of[i] = slot;
        let (bi, vi) = (&inputs.bbar[i * d..(i + 1) * d], &inputs.v[i * dv..(i + 1) * dv]);
        {
            let h = &mut pool.data[slot * width..(slot + 1) * width];
            for (r, &b) in bi.iter().enumerate() {
                for (o, &vv) in h[r * dv..(r + 1) * dv].iter_mut().zip(vi) {
                    *o = b * vv;
                }
            }
        }
        for a in layout.row(i) {
            let j = layout.src[a];
            let w = inputs.weights[a];
            let sj = slot_of[j];
            // the parent's slot is distinct from ours: it is still pending
            let (lo, hi) = if sj < slot { (sj, slot) } else { (slot, sj) };
            let (left, right) = pool.data.split_at_mut(hi * width);
            let (dst, src) = if sj < slot {
                (&mut right[..width], &left[lo * width..(lo + 1) * width])
            } else {
                (&mut left[lo * width..(lo + 1) * width], &right[..width])
            };
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += w * s;
            }
            pending[j] -= 1;
            if pending[j] == 0 {
                pool.free.push(sj);
            }
        }
        let h = &pool.data[slot * width..(slot + 1) * width];
        let ci = &inputs.c[i * d..(i + 1) * d];
        let yi = &mut y[i * dv..(i + 1) * dv];
        yi.iter_mut().for_each(|o| *o = R::ZERO);
        for (r, &cr) in ci.iter().enumerate() {
            for (o, &hv) in yi.iter_mut().zip(&h[r * dv..(r + 1) * dv]) {
                *o += cr * hv;
            }
        }
        if let Some(k) = keep.as_deref_mut() {
            k[i * width..(i + 1) * width].copy_from_slice(h);
        }
        if pending[i] == 0 {
            pool.free.push(slot);
        }
    }
}

/// Gradients of the recurrence with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceGrads {
    pub weights: Vec<f64>,
    pub c: DenseMatrix,
    pub bbar: DenseMatrix,
    pub v: DenseMatrix,
}

/// Reverse-topological adjoint pass of [`recurrence_kernel`]:
/// `h̄_i = C_i ȳ_iᵀ + Σ_children A_ci h̄_c`, `Ā_ij = ⟨h̄_i, h_j⟩`,
/// `B̄̄_i = h̄_i v_i`, `v̄_i = h̄_iᵀ B̄_i`, `C̄_i = h_i ȳ_i`.
pub fn recurrence_backward(
    order: &[usize],
    layout: &ArcLayout,
    weights: &[f64],
    c: &DenseMatrix,
    bbar: &DenseMatrix,
    v: &DenseMatrix,
    y_bar: &DenseMatrix,
) -> RecurrenceGrads {
    let (n, d, dv) = (layout.num_nodes, c.cols(), v.cols());
    let width = d * dv;
    let inputs = RecurrenceInputs { weights, c: c.as_slice(), bbar: bbar.as_slice(), v: v.as_slice(), d, dv };
    let mut y = vec![0.0; n * dv];
    let mut hs = Vec::new();
    recurrence_kernel(order, layout, &inputs, &mut y, Some(&mut hs));

    let mut h_bar = vec![0.0; n * width];
    let mut g = RecurrenceGrads {
        weights: vec![0.0; weights.len()],
        c: DenseMatrix::zeros(n, d),
        bbar: DenseMatrix::zeros(n, d),
        v: DenseMatrix::zeros(n, dv),
    };
    for &i in order.iter().rev() {
        let yb = y_bar.row(i);
        let hb = &mut h_bar[i * width..(i + 1) * width];
        for r in 0..d {
            let cr = c[(i, r)];
            for (o, &ybv) in hb[r * dv..(r + 1) * dv].iter_mut().zip(yb) {
                *o += cr * ybv;
            }
        }
        let h = &hs[i * width..(i + 1) * width];
        for r in 0..d {
            g.c[(i, r)] = h[r * dv..(r + 1) * dv].iter().zip(yb).map(|(a, b)| a * b).sum();
            g.bbar[(i, r)] = hb[r * dv..(r + 1) * dv].iter().zip(v.row(i)).map(|(a, b)| a * b).sum();
        }
        for col in 0..dv {
            g.v[(i, col)] = (0..d).map(|r| hb[r * dv + col] * bbar[(i, r)]).sum();
        }
        let hb = h_bar[i * width..(i + 1) * width].to_vec();
        for a in layout.row(i) {
            let j = layout.src[a];
            let hj = &hs[j * width..(j + 1) * width];
            g.weights[a] = hb.iter().zip(hj).map(|(x, y)| x * y).sum();
            let w = weights[a];
            for (o, &x) in h_bar[j * width..(j + 1) * width].iter_mut().zip(&hb) {
                *o += w * x;
            }
        }
    }
    g
}

/// Linear-time mixing on a DAG. `adj` must come from a DAG regime.
pub fn dag_recurrence(plan: &DagPlan, adj: &WeightedAdjacency, c: &DenseMatrix, bbar: &DenseMatrix, v: &DenseMatrix) -> Result<MixOutput> {
    dag_recurrence_with(plan, adj, c, bbar, v, false)
}

pub fn dag_recurrence_with(
    plan: &DagPlan,
    adj: &WeightedAdjacency,
    c: &DenseMatrix,
    bbar: &DenseMatrix,
    v: &DenseMatrix,
    keep_states: bool,
) -> Result<MixOutput> {
    if !adj.regime.is_dag() || plan.num_nodes() != adj.num_nodes() {
        return Err(Error::NotADag);
    }
    let n = adj.num_nodes();
    if c.rows() != n || bbar.shape() != c.shape() || v.rows() != n {
        return Err(Error::ShapeMismatch { op: "dag_recurrence", left: c.shape(), right: bbar.shape() });
    }
    let (d, dv) = (c.cols(), v.cols());
    let inputs = RecurrenceInputs { weights: &adj.weights, c: c.as_slice(), bbar: bbar.as_slice(), v: v.as_slice(), d, dv };
    let mut y = vec![0.0; n * dv];
    let mut keep = keep_states.then(Vec::new);
    recurrence_kernel(plan.topo_order(), &adj.layout, &inputs, &mut y, keep.as_mut());
    let hidden = keep.map(|hs| {
        vec![hs
            .chunks(d * dv)
            .map(|chunk| DenseMatrix::from_vec(d, dv, chunk.to_vec()).expect("finite states"))
            .collect()]
    });
    Ok(MixOutput { y: DenseMatrix::from_vec(n, dv, y)?, hidden })
}

/// How outputs of decomposition parts are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixConfig {
    pub regime: Regime,
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub dense_cap: usize,
    pub combine: Combine,
}

impl MixConfig {
    pub fn new(regime: Regime, algorithm: Algorithm) -> Self {
        MixConfig { regime, algorithm, gamma: crate::params::DEFAULT_GAMMA, dense_cap: DEFAULT_DENSE_CAP, combine: Combine::Sum }
    }
}

/// Truncation depth used by squaring when none is given: the DAG's longest
/// path, or the graph's BFS diameter.
pub fn default_depth(graph: &Graph, plan: Option<&DagPlan>) -> usize {
    plan.map_or_else(|| graph.diameter(), DagPlan::diameter).max(1)
}

/// Builds the mask for one head's adjacency as selected by `cfg`.
pub fn build_mask(graph: &Graph, plan: Option<&DagPlan>, adj: &WeightedAdjacency, cfg: &MixConfig) -> Result<MaskMatrix> {
    match cfg.algorithm {
        Algorithm::Dense => mask_dense_capped(adj, cfg.dense_cap),
        Algorithm::Squaring => mask_squaring(adj, default_depth(graph, plan)),
        Algorithm::Neumann(k) => mask_neumann_capped(adj, k, cfg.dense_cap),
        Algorithm::Recurrence => Err(Error::UnsupportedCombination { regime: cfg.regime.token(), algorithm: "recurrence" }),
    }
}

/// One head: adjacency, then mask + mix or the recurrence.
pub fn mix_head(graph: &Graph, plan: Option<&DagPlan>, params: &SsmParams, cfg: &MixConfig) -> Result<DenseMatrix> {
    cfg.algorithm.check(cfg.regime)?;
    let (adj, bbar) = build_adjacency(graph, plan, params, cfg.regime, cfg.gamma)?;
    match cfg.algorithm {
        Algorithm::Recurrence => Ok(dag_recurrence(plan.ok_or(Error::NotADag)?, &adj, &params.c, &bbar, &params.v)?.y),
        _ => mix_dense(&build_mask(graph, plan, &adj, cfg)?.l, &params.c, &bbar, &params.v),
    }
}

fn forward_on(graph: &Graph, plan: Option<&DagPlan>, x: &DenseMatrix, edge_x: Option<&DenseMatrix>, weights: &ProjectionWeights, cfg: &MixConfig) -> Result<DenseMatrix> {
    let heads = compute_params_with(graph, x, edge_x, weights)?;
    let ys = heads.iter().map(|p| mix_head(graph, plan, p, cfg)).collect::<Result<Vec<_>>>()?;
    DenseMatrix::concat_cols(&ys)
}

/// End to end on a single topology: params → adjacency → mask → mix, per
/// head, channel groups concatenated.
pub fn chimera_forward(graph: &Graph, x: &DenseMatrix, edge_x: Option<&DenseMatrix>, weights: &ProjectionWeights, cfg: &MixConfig) -> Result<MixOutput> {
    cfg.algorithm.check(cfg.regime)?;
    let plan = if cfg.regime.is_dag() { Some(plan_dag(graph)?) } else { None };
    Ok(MixOutput { y: forward_on(graph, plan.as_ref(), x, edge_x, weights, cfg)?, hidden: None })
}

/// Runs every part of a decomposition and combines the outputs. `weights`
/// holds the distinct weight sets and `assignment[p]` picks the set for
/// part `p`.
pub fn chimera_forward_decomposed(
    decomposition: &Decomposition,
    x: &DenseMatrix,
    edge_x: Option<&DenseMatrix>,
    weights: &[ProjectionWeights],
    assignment: &[usize],
    cfg: &MixConfig,
) -> Result<MixOutput> {
    cfg.algorithm.check(cfg.regime)?;
    if assignment.len() != decomposition.num_parts() || assignment.iter().any(|&a| a >= weights.len()) {
        return Err(Error::InvalidConfig(format!(
            "weight assignment {assignment:?} does not fit {} parts and {} weight sets",
            decomposition.num_parts(),
            weights.len()
        )));
    }
    let mut total: Option<DenseMatrix> = None;
    for (p, part) in decomposition.parts.iter().enumerate() {
        let ex = edge_x.map(|z| decomposition.part_edge_features(p, z));
        let plan = cfg.regime.is_dag().then_some(&part.plan);
        let y = forward_on(&part.graph, plan, x, ex.as_ref(), &weights[assignment[p]], cfg)?;
        total = Some(match total {
            None => y,
            Some(acc) => acc.add(&y)?,
        });
    }
    let mut y = total.ok_or(Error::EmptyGraph)?;
    if cfg.combine == Combine::Mean {
        y = y.scale(1.0 / decomposition.num_parts() as f64);
    }
    Ok(MixOutput { y, hidden: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{line_graph, Graph};
    use crate::rng::SeededRng;
    use alloc::string::ToString;

    fn chain_adj(a: &[f64]) -> (DagPlan, WeightedAdjacency) {
        // a[k] weights the arc k → k+1
        let g = line_graph(a.len() + 1, true).unwrap();
        let plan = plan_dag(&g).unwrap();
        let arcs: Vec<_> = a.iter().enumerate().map(|(k, &w)| (k + 1, k, w)).collect();
        let adj = WeightedAdjacency::from_weights(a.len() + 1, &arcs, Regime::Dag, Some(plan.clone())).unwrap();
        (plan, adj)
    }

    #[test]
    fn algorithm_tokens() {
        assert_eq!(Algorithm::parse("neumann:7").unwrap(), Algorithm::Neumann(7));
        assert_eq!(Algorithm::parse("squaring").unwrap().to_string(), "squaring");
        let err = Algorithm::parse("qr").unwrap_err().to_string();
        assert!(err.contains("neumann:<k>"));
        assert!(Algorithm::parse("neumann:").is_err());
        assert!(Algorithm::Recurrence.check(Regime::General).is_err());
    }

    #[test]
    fn empty_adjacency_gives_identity() {
        let adj = WeightedAdjacency::from_weights(4, &[], Regime::General, None).unwrap();
        assert_eq!(mask_dense(&adj).unwrap().l, DenseMatrix::identity(4));
        for k in [1, 3, 17] {
            assert_eq!(mask_squaring(&adj, k).unwrap().l, DenseMatrix::identity(4));
        }
        assert_eq!(mask_neumann(&adj, 0).unwrap().l, DenseMatrix::identity(4));
    }

    #[test]
    fn three_node_chain_mask() {
        let (_, adj) = chain_adj(&[0.5, 0.25]);
        let l = mask_dense(&adj).unwrap().l;
        let expect = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.5, 1.0, 0.0], vec![0.125, 0.25, 1.0]]).unwrap();
        assert!(l.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn two_cycle_mask() {
        let adj = WeightedAdjacency::from_weights(2, &[(0, 1, 0.4), (1, 0, 0.4)], Regime::General, None).unwrap();
        let l = mask_dense(&adj).unwrap().l;
        assert!((l[(0, 0)] - 1.0 / 0.84).abs() < 1e-14);
        assert!((l[(0, 1)] - 0.4 / 0.84).abs() < 1e-14);
    }

    #[test]
    fn squaring_counts_and_terms() {
        let adj = WeightedAdjacency::from_weights(
            4,
            &[(1, 0, 0.2), (2, 1, 0.2), (3, 2, 0.2), (0, 3, 0.2)],
            Regime::General,
            None,
        )
        .unwrap();
        let m = mask_squaring(&adj, 4).unwrap();
        assert!(!m.exact);
        assert_eq!(m.matmul_count, 4);
        let reference = neumann_sum(&adj.to_dense(), 7).unwrap();
        assert!(m.l.max_abs_diff(&reference) < 1e-15);
        let dense = mask_dense(&adj).unwrap().l;
        for (a, b) in m.l.as_slice().iter().zip(dense.as_slice()) {
            assert!(*a <= *b + 1e-15);
            assert_eq!(*a > 0.0, *b > 0.0);
        }
        for (k, count) in [(1, 0), (2, 2), (3, 4), (4, 4), (5, 6), (256, 16)] {
            assert_eq!(squaring_product(&DenseMatrix::zeros(2, 2), k).unwrap().1, count, "k = {k}");
        }
    }

    #[test]
    fn chain_mask_exact_by_squaring() {
        let (plan, adj) = chain_adj(&[0.9, 0.3, 0.7]);
        let m = mask_squaring(&adj, plan.diameter()).unwrap();
        assert!(m.exact);
        assert!(m.l.max_abs_diff(&mask_dense(&adj).unwrap().l) < 1e-12);
        assert!(!mask_neumann(&adj, 2).unwrap().exact);
        assert!(mask_neumann(&adj, 3).unwrap().exact);
    }

    #[test]
    fn scalar_chain_recurrence() {
        let a = [0.9, 0.5, 0.7, 0.2];
        let (plan, adj) = chain_adj(&a);
        let t = a.len() + 1;
        let b = DenseMatrix::column(&[1.0, 2.0, -1.0, 0.5, 3.0]);
        let c = DenseMatrix::column(&[0.5, 1.0, 2.0, -1.0, 1.5]);
        let v = DenseMatrix::column(&[1.0, -2.0, 0.3, 4.0, 1.0]);
        let out = dag_recurrence(&plan, &adj, &c, &b, &v).unwrap();
        let mut h = 0.0;
        for i in 0..t {
            h = if i == 0 { 0.0 } else { a[i - 1] * h } + b[(i, 0)] * v[(i, 0)];
            assert_eq!(out.y[(i, 0)], c[(i, 0)] * h);
        }
    }

    #[test]
    fn recurrence_matches_dense_on_dag() {
        let mut rng = SeededRng::new(11);
        let t = 40;
        let mut edges = Vec::new();
        for i in 0..t {
            for j in 0..i {
                if rng.bernoulli(0.15) {
                    edges.push((j, i));
                }
            }
        }
        let g = Graph::new(t, true, &edges).unwrap();
        let plan = plan_dag(&g).unwrap();
        let arcs: Vec<_> = edges.iter().map(|&(s, d)| (d, s, rng.uniform(0.05, 0.6))).collect();
        let adj = WeightedAdjacency::from_weights(t, &arcs, Regime::Dag, Some(plan.clone())).unwrap();
        let c = rng.gaussian_matrix(t, 3, 1.0);
        let b = rng.gaussian_matrix(t, 3, 1.0);
        let v = rng.gaussian_matrix(t, 2, 1.0);
        let rec = dag_recurrence_with(&plan, &adj, &c, &b, &v, true).unwrap();
        let dense = mix_output(&mask_dense(&adj).unwrap(), &c, &b, &v).unwrap();
        assert!(rec.y.max_abs_diff(&dense.y) < 1e-10 * (1.0 + dense.y.max_abs()));
        assert_eq!(rec.hidden.unwrap()[0].len(), t);
    }

    #[test]
    fn identity_mask_is_local() {
        let mut rng = SeededRng::new(2);
        let (c, b, v) = (rng.gaussian_matrix(3, 2, 1.0), rng.gaussian_matrix(3, 2, 1.0), rng.gaussian_matrix(3, 2, 1.0));
        let y = mix_dense(&DenseMatrix::identity(3), &c, &b, &v).unwrap();
        for i in 0..3 {
            let s: f64 = (0..2).map(|r| c[(i, r)] * b[(i, r)]).sum();
            for k in 0..2 {
                assert!((y[(i, k)] - s * v[(i, k)]).abs() < 1e-15);
            }
        }
        assert!(mix_dense(&DenseMatrix::identity(2), &c, &b, &v).is_err());
    }

    #[test]
    fn dense_cap_enforced() {
        let adj = WeightedAdjacency::from_weights(5, &[], Regime::General, None).unwrap();
        assert!(matches!(mask_dense_capped(&adj, 4), Err(Error::DenseCapExceeded { .. })));
    }
}
