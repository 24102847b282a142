//! Graph sources: generator specs or graph files.
//!
//! | spec                      | graph                                          |
//! |---------------------------|------------------------------------------------|
//! | `chain:T`                 | directed chain `0 → 1 → … → T-1`               |
//! | `line:T`                  | undirected chain                               |
//! | `grid:HxW`                | undirected 4-neighbor grid, row-major          |
//! | `randdag:T:p:seed`        | edge `j → i` for every `j < i` with prob. `p`  |
//! | `randgraph:T:p:seed`      | undirected Erdős–Rényi                         |
//!
//! Anything else is read as a graph file path.

use std::fmt;
use std::path::{Path, PathBuf};

use chimera_core::graph::{grid_graph, line_graph};
use chimera_core::rng::SeededRng;
use chimera_core::Graph;

use crate::error::{CliError, CliResult};
use crate::formats::load_graph;

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Chain(usize),
    Line(usize),
    Grid(usize, usize),
    RandDag { nodes: usize, p: f64, seed: u64 },
    RandGraph { nodes: usize, p: f64, seed: u64 },
    File(PathBuf),
}

impl GraphSource {
    pub fn parse(spec: &str) -> CliResult<Self> {
        let fail = |reason: &str| CliError::GraphSpec { spec: spec.into(), reason: reason.into() };
        let (kind, rest) = match spec.split_once(':') {
            Some(pair) => pair,
            None => return Ok(GraphSource::File(spec.into())),
        };
        let count = |s: &str| -> CliResult<usize> {
            match s.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(fail("node counts must be positive integers")),
            }
        };
        let random = |rest: &str| -> CliResult<(usize, f64, u64)> {
            let fields: Vec<&str> = rest.split(':').collect();
            let [t, p, seed] = fields[..] else {
                return Err(fail("expected <T>:<p>:<seed>"));
            };
            let p: f64 = p.parse().map_err(|_| fail("edge probability must be a number"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(fail("edge probability must lie in [0, 1]"));
            }
            let seed = seed.parse().map_err(|_| fail("seed must be an unsigned integer"))?;
            Ok((count(t)?, p, seed))
        };
        match kind {
            "chain" => Ok(GraphSource::Chain(count(rest)?)),
            "line" => Ok(GraphSource::Line(count(rest)?)),
            "grid" => {
                let (h, w) = rest.split_once('x').ok_or_else(|| fail("expected grid:<H>x<W>"))?;
                Ok(GraphSource::Grid(count(h)?, count(w)?))
            }
            "randdag" => random(rest).map(|(nodes, p, seed)| GraphSource::RandDag { nodes, p, seed }),
            "randgraph" => random(rest).map(|(nodes, p, seed)| GraphSource::RandGraph { nodes, p, seed }),
            _ if Path::new(spec).exists() => Ok(GraphSource::File(spec.into())),
            _ => Err(fail("unknown generator (expected chain, line, grid, randdag, randgraph or a file path)")),
        }
    }

    pub fn build(&self) -> CliResult<Graph> {
        Ok(match *self {
            GraphSource::Chain(t) => line_graph(t, true)?,
            GraphSource::Line(t) => line_graph(t, false)?,
            GraphSource::Grid(h, w) => grid_graph(h, w)?,
            GraphSource::RandDag { nodes, p, seed } => random_dag(nodes, p, seed)?,
            GraphSource::RandGraph { nodes, p, seed } => random_graph(nodes, p, seed)?,
            GraphSource::File(ref path) => load_graph(path)?,
        })
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::Chain(t) => write!(f, "chain:{t}"),
            GraphSource::Line(t) => write!(f, "line:{t}"),
            GraphSource::Grid(h, w) => write!(f, "grid:{h}x{w}"),
            GraphSource::RandDag { nodes, p, seed } => write!(f, "randdag:{nodes}:{p}:{seed}"),
            GraphSource::RandGraph { nodes, p, seed } => write!(f, "randgraph:{nodes}:{p}:{seed}"),
            GraphSource::File(path) => write!(f, "{}", path.display()),
        }
    }
}

/// Erdős–Rényi over ordered pairs `j < i`, so acyclic by construction.
pub fn random_dag(nodes: usize, p: f64, seed: u64) -> chimera_core::Result<Graph> {
    erdos_renyi(nodes, p, seed, true)
}

pub fn random_graph(nodes: usize, p: f64, seed: u64) -> chimera_core::Result<Graph> {
    erdos_renyi(nodes, p, seed, false)
}

fn erdos_renyi(nodes: usize, p: f64, seed: u64, directed: bool) -> chimera_core::Result<Graph> {
    let mut rng = SeededRng::new(seed);
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in 0..i {
            if rng.bernoulli(p) {
                edges.push((j, i));
            }
        }
    }
    Graph::new(nodes, directed, &edges)
}

/// `nodes`-node DAG whose longest path has exactly `diameter` arcs: a chain
/// over the first `diameter + 1` nodes, the rest hanging off node 0.
pub fn dag_with_diameter(nodes: usize, diameter: usize) -> chimera_core::Result<Graph> {
    let spine = (diameter + 1).min(nodes);
    let mut edges: Vec<(usize, usize)> = (1..spine).map(|i| (i - 1, i)).collect();
    edges.extend((spine..nodes).map(|i| (0, i)));
    Graph::new(nodes, true, &edges)
}
