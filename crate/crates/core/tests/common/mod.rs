#![allow(dead_code)]

use chimera_core::graph::Graph;
use chimera_core::rng::SeededRng;
use chimera_core::DenseMatrix;

/// Erdős–Rényi on ordered pairs `j < i`; acyclic by construction.
pub fn random_dag(rng: &mut SeededRng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if rng.bernoulli(p) {
                edges.push((j, i));
            }
        }
    }
    Graph::new(n, true, &edges).unwrap()
}

/// Random directed graph, cycles allowed.
pub fn random_digraph(rng: &mut SeededRng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.bernoulli(p) {
                edges.push((j, i));
            }
        }
    }
    Graph::new(n, true, &edges).unwrap()
}

pub fn random_undirected(rng: &mut SeededRng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, false, &edges).unwrap()
}

pub fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.max_abs_diff(b) / (1.0 + a.max_abs().max(b.max_abs()))
}
