//! Topology-aware state-space sequence mixing.
//!
//! A state-space model on a causal sequence mixes tokens through a mask `L`
//! that turns out to be the resolvent `(I - A)^-1` of the weighted adjacency
//! of a directed line graph. This crate generalizes that mixing to arbitrary
//! graphs:
//!
//! * [`graph`] validates topologies, plans DAGs (topological order, parents,
//!   longest path) and produces the canonical line/grid DAG decompositions.
//! * [`linalg`] is the small dense linear algebra kernel everything runs on.
//! * [`params`] turns node features into `B`, `C`, `V`, `Δ`, `Ψ`, `Δ'` and
//!   builds the weighted adjacency under each normalization regime.
//! * [`resolvent`] computes the mask (dense inverse, squaring trick, truncated
//!   Neumann series) or the linear-time DAG recurrence, and the mixed output
//!   `Y = (L ⊙ C B̄ᵀ) V`.
//! * [`grad`] is a tape-based reverse-mode engine with a cached-inverse
//!   resolvent rule and a finite-difference oracle.
//! * [`layer`] assembles the gated block and a small deterministic trainer on
//!   synthetic graph tasks.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod grad;
pub mod graph;
pub mod layer;
pub mod linalg;
pub mod params;
pub mod resolvent;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{Decomposition, DecompositionPart, DagPlan, Graph};
pub use linalg::DenseMatrix;
pub use params::{ProjectionWeights, Regime, SsmParams, WeightedAdjacency};
pub use resolvent::{Algorithm, MaskMatrix, MixOutput};
