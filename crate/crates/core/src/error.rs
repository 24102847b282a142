use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the core library can report.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    IndexOutOfRange { node: usize, num_nodes: usize },
    SelfLoop { node: usize },
    DuplicateEdge { src: usize, dst: usize },
    FeatureShapeMismatch { what: &'static str, expected_rows: usize, found_rows: usize },
    EmptyGraph,
    NotDirected,
    /// One witness cycle, listed in traversal order.
    CycleDetected { cycle: Vec<usize> },
    OracleSizeExceeded { num_nodes: usize, length: usize },
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    NonFinite { op: &'static str },
    Singular { column: usize, pivot: f64 },
    ZeroDiagonal { row: usize },
    MissingFeatures { what: &'static str },
    GammaOutOfRange { gamma: f64 },
    NotADag,
    NotALine,
    DenseCapExceeded { num_nodes: usize, cap: usize },
    UnsupportedCombination { regime: &'static str, algorithm: &'static str },
    InvalidConfig(String),
    InvalidMode(String),
    TapeEmpty,
    NoInverseNode,
    DivergenceDetected { step: usize },
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::IndexOutOfRange { .. } => "graph.index-out-of-range",
            Error::SelfLoop { .. } => "graph.self-loop",
            Error::DuplicateEdge { .. } => "graph.duplicate-edge",
            Error::FeatureShapeMismatch { .. } => "graph.feature-shape",
            Error::EmptyGraph => "graph.empty",
            Error::NotDirected => "graph.not-directed",
            Error::CycleDetected { .. } => "graph.cycle",
            Error::OracleSizeExceeded { .. } => "graph.oracle-size",
            Error::ShapeMismatch { .. } => "linalg.shape",
            Error::NonFinite { .. } => "linalg.non-finite",
            Error::Singular { .. } => "linalg.singular",
            Error::ZeroDiagonal { .. } => "linalg.zero-diagonal",
            Error::MissingFeatures { .. } => "params.missing-features",
            Error::GammaOutOfRange { .. } => "params.gamma-range",
            Error::NotADag => "params.not-a-dag",
            Error::NotALine => "params.not-a-line",
            Error::DenseCapExceeded { .. } => "resolvent.dense-cap",
            Error::UnsupportedCombination { .. } => "resolvent.unsupported",
            Error::InvalidConfig(_) => "config.invalid",
            Error::InvalidMode(_) => "layer.invalid-mode",
            Error::TapeEmpty => "grad.tape-empty",
            Error::NoInverseNode => "grad.no-inverse-node",
            Error::DivergenceDetected { .. } => "train.divergence",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { node, num_nodes } => {
                write!(f, "node index {node} out of range for {num_nodes} nodes")
            }
            Error::SelfLoop { node } => write!(f, "self-loop on node {node}"),
            Error::DuplicateEdge { src, dst } => write!(f, "duplicate edge ({src}, {dst})"),
            Error::FeatureShapeMismatch { what, expected_rows, found_rows } => write!(
                f,
                "{what} have {found_rows} rows, expected {expected_rows}"
            ),
            Error::EmptyGraph => write!(f, "graph must have at least one node"),
            Error::NotDirected => write!(f, "operation requires a directed graph"),
            Error::CycleDetected { cycle } => write!(f, "graph has a cycle: {cycle:?}"),
            Error::OracleSizeExceeded { num_nodes, length } => write!(
                f,
                "path-sum oracle limited to T <= 12 and k <= 8 (got T={num_nodes}, k={length})"
            ),
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Error::Singular { column, pivot } => {
                write!(f, "matrix is singular (pivot {pivot:e} in column {column})")
            }
            Error::ZeroDiagonal { row } => write!(f, "zero diagonal in triangular solve at row {row}"),
            Error::MissingFeatures { what } => write!(f, "missing {what}"),
            Error::GammaOutOfRange { gamma } => write!(f, "gamma must lie in (0, 1), got {gamma}"),
            Error::NotADag => write!(f, "operation requires an acyclic topology"),
            Error::NotALine => write!(f, "operation requires an undirected chain"),
            Error::DenseCapExceeded { num_nodes, cap } => write!(
                f,
                "dense mask for {num_nodes} nodes exceeds the cap of {cap}; use recurrence or squaring"
            ),
            Error::UnsupportedCombination { regime, algorithm } => {
                write!(f, "algorithm `{algorithm}` is not available for regime `{regime}`")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidMode(msg) => write!(f, "invalid sharing mode: {msg}"),
            Error::TapeEmpty => write!(f, "tape has no recorded operations"),
            Error::NoInverseNode => write!(f, "tape contains no dense resolvent node"),
            Error::DivergenceDetected { step } => write!(f, "loss diverged at step {step}"),
        }
    }
}

impl core::error::Error for Error {}
