//! Graph topology, DAG planning and the canonical DAG decompositions.
//!
//! Nodes are dense indices `0..T`. An edge `(src, dst)` means `src`
//! influences `dst`, which lands in the adjacency matrix as `A[dst][src]`.

use alloc::collections::{BTreeSet, BinaryHeap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// One directed arc of the expanded adjacency: `A[dst][src]`, carrying the
/// index of the stored edge it came from (for edge features).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arc {
    pub dst: usize,
    pub src: usize,
    pub edge: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    node_features: Option<DenseMatrix>,
    edge_features: Option<DenseMatrix>,
}

/// Validates and builds a [`Graph`].
///
/// Undirected edges are stored once with `src < dst`; the pair `(1, 0)` after
/// `(0, 1)` is a duplicate.
pub fn build_graph(
    num_nodes: usize,
    directed: bool,
    edge_list: &[(usize, usize)],
    node_features: Option<DenseMatrix>,
    edge_features: Option<DenseMatrix>,
) -> Result<Graph> {
    if num_nodes == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(src, dst) in edge_list {
        for node in [src, dst] {
            if node >= num_nodes {
                return Err(Error::IndexOutOfRange { node, num_nodes });
            }
        }
        if src == dst {
            return Err(Error::SelfLoop { node: src });
        }
        let e = if directed { (src, dst) } else { (src.min(dst), src.max(dst)) };
        if !seen.insert(e) {
            return Err(Error::DuplicateEdge { src, dst });
        }
        edges.push(e);
    }
    if let Some(x) = &node_features {
        if x.rows() != num_nodes {
            return Err(Error::FeatureShapeMismatch {
                what: "node features",
                expected_rows: num_nodes,
                found_rows: x.rows(),
            });
        }
    }
    if let Some(z) = &edge_features {
        if z.rows() != edges.len() {
            return Err(Error::FeatureShapeMismatch {
                what: "edge features",
                expected_rows: edges.len(),
                found_rows: z.rows(),
            });
        }
    }
    Ok(Graph { num_nodes, directed, edges, node_features, edge_features })
}

impl Graph {
    pub fn new(num_nodes: usize, directed: bool, edges: &[(usize, usize)]) -> Result<Self> {
        build_graph(num_nodes, directed, edges, None, None)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> Option<&DenseMatrix> {
        self.node_features.as_ref()
    }

    pub fn edge_features(&self) -> Option<&DenseMatrix> {
        self.edge_features.as_ref()
    }

    pub fn with_node_features(self, x: DenseMatrix) -> Result<Self> {
        build_graph(self.num_nodes, self.directed, &self.edges, Some(x), self.edge_features)
    }

    pub fn with_edge_features(self, z: DenseMatrix) -> Result<Self> {
        build_graph(self.num_nodes, self.directed, &self.edges, self.node_features, Some(z))
    }

    /// Directed arcs sorted by `(dst, src)`; undirected edges expand to both
    /// directions sharing one edge index.
    pub fn arcs(&self) -> Vec<Arc> {
        let mut arcs = Vec::with_capacity(if self.directed { 1 } else { 2 } * self.edges.len());
        for (edge, &(src, dst)) in self.edges.iter().enumerate() {
            arcs.push(Arc { dst, src, edge });
            if !self.directed {
                arcs.push(Arc { dst: src, src: dst, edge });
            }
        }
        arcs.sort_unstable();
        arcs
    }

    /// Neighborhood used by the local graph convolution: in-neighbors for a
    /// directed graph (keeps chains causal), all neighbors otherwise.
    pub fn conv_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.num_nodes];
        for a in self.arcs() {
            nbrs[a.dst].push(a.src);
        }
        nbrs
    }

    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes];
        for a in self.arcs() {
            out[a.src].push(a.dst);
        }
        out
    }

    /// Largest finite shortest-path distance (BFS from every node, arcs
    /// followed in their direction). Unreachable pairs are ignored.
    pub fn diameter(&self) -> usize {
        let out = self.out_neighbors();
        let mut best = 0;
        let mut dist = vec![usize::MAX; self.num_nodes];
        let mut queue = VecDeque::new();
        for s in 0..self.num_nodes {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                best = best.max(dist[u]);
                for &v in &out[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        best
    }

    /// Same topology with every edge made undirected.
    pub fn to_undirected(&self) -> Result<Graph> {
        build_graph(self.num_nodes, false, &self.edges, self.node_features.clone(), self.edge_features.clone())
    }

    /// Relabels node `v` as `perm[v]`, carrying node features along.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidConfig(format!(
                "permutation has {} entries for {} nodes",
                perm.len(),
                self.num_nodes
            )));
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let x = self.node_features.as_ref().map(|x| {
            let mut out = DenseMatrix::zeros(x.rows(), x.cols());
            for v in 0..self.num_nodes {
                out.row_mut(perm[v]).copy_from_slice(x.row(v));
            }
            out
        });
        build_graph(self.num_nodes, self.directed, &edges, x, self.edge_features.clone())
    }

    /// Dense matrix with `A[dst][src] = weight(arc)`.
    pub fn weighted_adjacency(&self, mut weight: impl FnMut(&Arc) -> f64) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.num_nodes, self.num_nodes);
        for arc in self.arcs() {
            a[(arc.dst, arc.src)] = weight(&arc);
        }
        a
    }
}

/// Acyclicity certificate for a directed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DagPlan {
    topo_order: Vec<usize>,
    position: Vec<usize>,
    parents: Vec<Vec<usize>>,
    parent_edges: Vec<Vec<usize>>,
    num_edges: usize,
    diameter: usize,
}

impl DagPlan {
    pub fn num_nodes(&self) -> usize {
        self.topo_order.len()
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Position of each node within the topological order.
    pub fn position(&self) -> &[usize] {
        &self.position
    }

    /// In-neighbors `p(i)`, ascending.
    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// Graph edge index of each entry of [`parents`](Self::parents).
    pub fn parent_edges(&self, node: usize) -> &[usize] {
        &self.parent_edges[node]
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Length (in edges) of the longest directed path.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Smallest `K` with `A^K = 0`.
    pub fn nilpotency_index(&self) -> usize {
        self.diameter + 1
    }

    /// Nodes grouped by longest-path depth; nodes within a level are
    /// mutually independent.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut depth = vec![0usize; self.num_nodes()];
        let mut levels: Vec<Vec<usize>> = Vec::new();
        for &v in &self.topo_order {
            depth[v] = self.parents[v].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
            if levels.len() <= depth[v] {
                levels.resize(depth[v] + 1, Vec::new());
            }
            levels[depth[v]].push(v);
        }
        levels
    }
}

/// Topologically sorts a directed graph (Kahn, lowest index first) and
/// computes parents and the longest path.
pub fn plan_dag(graph: &Graph) -> Result<DagPlan> {
    if !graph.is_directed() {
        return Err(Error::NotDirected);
    }
    let n = graph.num_nodes();
    let mut parents = vec![Vec::new(); n];
    let mut parent_edges = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    for arc in graph.arcs() {
        parents[arc.dst].push(arc.src);
        parent_edges[arc.dst].push(arc.edge);
        children[arc.src].push(arc.dst);
    }
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < n {
        return Err(Error::CycleDetected { cycle: witness_cycle(&parents, &indegree) });
    }
    let mut position = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        position[v] = p;
    }
    let mut depth = vec![0usize; n];
    let mut diameter = 0;
    for &v in &order {
        depth[v] = parents[v].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        diameter = diameter.max(depth[v]);
    }
    Ok(DagPlan { topo_order: order, position, parents, parent_edges, num_edges: graph.num_edges(), diameter })
}

/// Every node left with positive in-degree after Kahn's algorithm has a
/// parent that is also left, so walking parents must revisit a node.
fn witness_cycle(parents: &[Vec<usize>], indegree: &[usize]) -> Vec<usize> {
    let start = indegree.iter().position(|&d| d > 0).unwrap_or(0);
    let mut visited_at = vec![usize::MAX; parents.len()];
    let mut walk = Vec::new();
    let mut v = start;
    while visited_at[v] == usize::MAX {
        visited_at[v] = walk.len();
        walk.push(v);
        v = match parents[v].iter().find(|&&p| indegree[p] > 0) {
            Some(&p) => p,
            None => break,
        };
    }
    let mut cycle = walk.split_off(visited_at[v].min(walk.len()));
    // walked against edge direction
    cycle.reverse();
    cycle
}

/// One acyclic piece of a decomposed topology.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionPart {
    pub name: String,
    pub graph: Graph,
    pub plan: DagPlan,
    /// `edge_map[k]` is the source-graph edge that part edge `k` orients.
    pub edge_map: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub source: Graph,
    pub parts: Vec<DecompositionPart>,
}

impl Decomposition {
    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    /// Distinct `(src, dst)` orientations over all parts.
    pub fn oriented_edges(&self) -> BTreeSet<(usize, usize)> {
        self.parts.iter().flat_map(|p| p.graph.edges().iter().copied()).collect()
    }

    /// Attaches features of the source graph to every part (edge features
    /// are gathered through each part's edge map).
    pub fn part_edge_features(&self, part: usize, source_edge_features: &DenseMatrix) -> DenseMatrix {
        let p = &self.parts[part];
        let mut z = DenseMatrix::zeros(p.edge_map.len(), source_edge_features.cols());
        for (k, &e) in p.edge_map.iter().enumerate() {
            z.row_mut(k).copy_from_slice(source_edge_features.row(e));
        }
        z
    }
}

fn make_part(name: &str, num_nodes: usize, oriented: Vec<((usize, usize), usize)>) -> DecompositionPart {
    let edges: Vec<(usize, usize)> = oriented.iter().map(|&(e, _)| e).collect();
    let edge_map = oriented.iter().map(|&(_, s)| s).collect();
    let graph = Graph::new(num_nodes, true, &edges).expect("decomposition edges are valid");
    let plan = plan_dag(&graph).expect("decomposition parts are acyclic");
    DecompositionPart { name: name.into(), graph, plan, edge_map }
}

/// Chain `0 - 1 - ... - (T-1)`; directed chains point forward.
pub fn line_graph(num_nodes: usize, directed: bool) -> Result<Graph> {
    let edges: Vec<(usize, usize)> = (1..num_nodes).map(|i| (i - 1, i)).collect();
    Graph::new(num_nodes, directed, &edges)
}

/// Undirected `H×W` grid, nodes row-major. Edges are listed node by node,
/// right neighbor before down neighbor.
pub fn grid_graph(height: usize, width: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let v = r * width + c;
            if c + 1 < width {
                edges.push((v, v + 1));
            }
            if r + 1 < height {
                edges.push((v, v + width));
            }
        }
    }
    Graph::new(height * width, false, &edges)
}

/// Forward chain `i → i+1` and reverse chain `i+1 → i`.
pub fn decompose_line(num_nodes: usize) -> Result<Decomposition> {
    let source = line_graph(num_nodes, false)?;
    let forward = (0..num_nodes.saturating_sub(1)).map(|i| ((i, i + 1), i)).collect();
    let reverse = (0..num_nodes.saturating_sub(1)).rev().map(|i| ((i + 1, i), i)).collect();
    Ok(Decomposition {
        parts: vec![make_part("forward", num_nodes, forward), make_part("reverse", num_nodes, reverse)],
        source,
    })
}

/// The four quadrant orientations of a grid: (→,↓), (←,↓), (→,↑), (←,↑).
pub fn decompose_grid(height: usize, width: usize) -> Result<Decomposition> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyGraph);
    }
    let source = grid_graph(height, width)?;
    let orientations = [("right-down", true, true), ("left-down", false, true), ("right-up", true, false), ("left-up", false, false)];
    let parts = orientations
        .iter()
        .map(|&(name, rightward, downward)| {
            let oriented = source
                .edges()
                .iter()
                .enumerate()
                .map(|(e, &(a, b))| {
                    // a < b: b is a's right or down neighbor
                    let horizontal = b == a + 1 && a / width == b / width;
                    let forward = if horizontal { rightward } else { downward };
                    (if forward { (a, b) } else { (b, a) }, e)
                })
                .collect();
            make_part(name, height * width, oriented)
        })
        .collect();
    Ok(Decomposition { source, parts })
}

/// Sum over all length-`k` walks `j → … → i` of the product of arc weights,
/// by explicit enumeration. Equals `(A^k)[i][j]` with `A[dst][src]` weights.
///
/// Exponential; limited to `T <= 12`, `k <= 8`.
pub fn path_sum_oracle(graph: &Graph, weights: &DenseMatrix, i: usize, j: usize, k: usize) -> Result<f64> {
    let n = graph.num_nodes();
    if n > 12 || k > 8 {
        return Err(Error::OracleSizeExceeded { num_nodes: n, length: k });
    }
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange { node: i.max(j), num_nodes: n });
    }
    if weights.shape() != (n, n) {
        return Err(Error::ShapeMismatch { op: "path_sum_oracle", left: (n, n), right: weights.shape() });
    }
    let out = graph.out_neighbors();
    fn walk(out: &[Vec<usize>], w: &DenseMatrix, at: usize, target: usize, left: usize, acc: f64) -> f64 {
        if left == 0 {
            return if at == target { acc } else { 0.0 };
        }
        out[at].iter().map(|&next| walk(out, w, next, target, left - 1, acc * w[(next, at)])).sum()
    }
    Ok(walk(&out, weights, j, i, k, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_dag(rng: &mut SeededRng, n: usize, p: f64) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rng.bernoulli(p) {
                    edges.push((j, i));
                }
            }
        }
        // scramble labels so the identity is not already a topological order
        let mut perm: Vec<usize> = (0..n).collect();
        for a in (1..n).rev() {
            let b = rng.int_inclusive(0, a);
            perm.swap(a, b);
        }
        Graph::new(n, true, &edges).unwrap().relabeled(&perm).unwrap()
    }

    #[test]
    fn build_graph_examples() {
        let g = Graph::new(2, true, &[(0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(Graph::new(3, true, &[(0, 0)]), Err(Error::SelfLoop { node: 0 }));
        assert_eq!(Graph::new(4, false, &[(0, 1), (1, 0)]), Err(Error::DuplicateEdge { src: 1, dst: 0 }));
        assert!(matches!(Graph::new(2, true, &[(0, 2)]), Err(Error::IndexOutOfRange { node: 2, .. })));
        let und = Graph::new(3, false, &[(2, 1)]).unwrap();
        assert_eq!(und.edges(), &[(1, 2)]);
        let x = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            build_graph(2, true, &[], Some(x), None),
            Err(Error::FeatureShapeMismatch { .. })
        ));
        assert!(matches!(
            build_graph(2, true, &[(0, 1)], None, Some(DenseMatrix::zeros(2, 1))),
            Err(Error::FeatureShapeMismatch { .. })
        ));
    }

    #[test]
    fn chain_plan() {
        let plan = plan_dag(&line_graph(5, true).unwrap()).unwrap();
        assert_eq!(plan.diameter(), 4);
        assert_eq!(plan.topo_order(), &[0, 1, 2, 3, 4]);
        assert_eq!(plan.levels().len(), 5);
    }

    #[test]
    fn cycle_is_reported_with_witness() {
        let g = Graph::new(4, true, &[(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap();
        match plan_dag(&g) {
            Err(Error::CycleDetected { cycle }) => {
                assert_eq!(cycle.len(), 3);
                for w in 0..cycle.len() {
                    let (a, b) = (cycle[w], cycle[(w + 1) % cycle.len()]);
                    assert!(g.edges().contains(&(a, b)), "{a}->{b} not an edge");
                }
            }
            other => panic!("expected cycle, got {other:?}"),
        }
        assert_eq!(plan_dag(&Graph::new(2, false, &[(0, 1)]).unwrap()), Err(Error::NotDirected));
    }

    #[test]
    fn random_dag_order_respects_edges() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let g = random_dag(&mut rng, 16, 0.3);
            let plan = plan_dag(&g).unwrap();
            for &(s, d) in g.edges() {
                assert!(plan.position()[s] < plan.position()[d]);
            }
            let total: usize = (0..16).map(|v| plan.parents(v).len()).sum();
            assert_eq!(total, g.num_edges());
            assert!(plan.diameter() < 16);
            // topological permutation makes A strictly lower triangular
            let a = g.weighted_adjacency(|_| 1.0);
            let p = a.permute_symmetric(plan.topo_order());
            for i in 0..16 {
                for j in i..16 {
                    assert_eq!(p[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn tie_break_lowest_index() {
        let g = Graph::new(4, true, &[(3, 0), (2, 1)]).unwrap();
        assert_eq!(plan_dag(&g).unwrap().topo_order(), &[2, 1, 3, 0]);
    }

    #[test]
    fn line_decomposition() {
        let d = decompose_line(3).unwrap();
        assert_eq!(d.parts[0].graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(d.parts[1].graph.edges(), &[(2, 1), (1, 0)]);
        let d1 = decompose_line(1).unwrap();
        assert!(d1.parts.iter().all(|p| p.graph.num_edges() == 0));

        let d = decompose_line(128).unwrap();
        let oriented = d.oriented_edges();
        assert_eq!(oriented.len(), 254);
        for &(a, b) in d.source.edges() {
            assert!(oriented.contains(&(a, b)) && oriented.contains(&(b, a)));
        }
    }

    fn reaches(g: &Graph, from: usize) -> Vec<bool> {
        let out = g.out_neighbors();
        let mut seen = vec![false; g.num_nodes()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &out[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    #[test]
    fn grid_decomposition() {
        let d = decompose_grid(1, 1).unwrap();
        assert_eq!(d.num_parts(), 4);
        assert!(d.parts.iter().all(|p| p.graph.num_edges() == 0));

        let d = decompose_grid(2, 2).unwrap();
        assert_eq!(d.source.num_edges(), 4);
        assert_eq!(d.oriented_edges().len(), 8);

        for (h, w) in [(7, 7), (3, 5), (1, 4)] {
            let d = decompose_grid(h, w).unwrap();
            let n = h * w;
            for j in 0..n {
                let mut any = vec![false; n];
                for part in &d.parts {
                    for (i, r) in reaches(&part.graph, j).into_iter().enumerate() {
                        any[i] |= r;
                    }
                }
                assert!(any.iter().all(|&r| r), "{h}x{w}: node {j} misses a target");
            }
            // every oriented edge lies in exactly two parts
            for e in d.oriented_edges() {
                let count = d.parts.iter().filter(|p| p.graph.edges().contains(&e)).count();
                assert_eq!(count, 2);
            }
        }
    }

    #[test]
    fn path_sum_examples() {
        let chain = line_graph(3, true).unwrap();
        let (a1, a2) = (0.3, 0.7);
        let w = chain.weighted_adjacency(|arc| if arc.dst == 1 { a1 } else { a2 });
        assert_eq!(path_sum_oracle(&chain, &w, 2, 0, 2).unwrap(), a1 * a2);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(path_sum_oracle(&chain, &w, i, j, 0).unwrap(), expect);
            }
        }
        let diamond = Graph::new(4, true, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let w = diamond.weighted_adjacency(|_| 0.5);
        assert_eq!(path_sum_oracle(&diamond, &w, 3, 0, 2).unwrap(), 0.5);
        let big = line_graph(13, true).unwrap();
        let w = big.weighted_adjacency(|_| 1.0);
        assert!(matches!(path_sum_oracle(&big, &w, 0, 0, 1), Err(Error::OracleSizeExceeded { .. })));
    }

    #[test]
    fn general_diameter_ignores_unreachable() {
        let g = Graph::new(5, false, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_eq!(g.diameter(), 2);
        let d = Graph::new(3, true, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(d.diameter(), 2);
    }
}
