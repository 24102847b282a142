use std::path::PathBuf;

/// Everything a command can fail with. Each variant maps to a stable code and
/// to one of the two failing exit statuses.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid graph source `{spec}`: {reason}")]
    GraphSpec { spec: String, reason: String },
    #[error("dtype f32 is only supported by `bench` with the recurrence algorithm")]
    UnsupportedDtype,
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid {what} file {path}: {reason}")]
    Format { what: &'static str, path: PathBuf, reason: String },
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] chimera_core::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage.argument",
            CliError::GraphSpec { .. } => "usage.graph-source",
            CliError::UnsupportedDtype => "usage.dtype",
            CliError::Read { .. } => "io.read",
            CliError::Write { .. } => "io.write",
            CliError::Json { .. } => "format.json",
            CliError::Format { .. } => "format.schema",
            CliError::ChecksFailed { .. } => "check.failed",
            CliError::Core(e) => e.code(),
        }
    }

    /// `2` for anything wrong with the invocation or its inputs, `1` for
    /// failures while running a valid one.
    pub fn exit_code(&self) -> u8 {
        use chimera_core::Error as E;
        match self {
            CliError::Usage(_)
            | CliError::GraphSpec { .. }
            | CliError::UnsupportedDtype
            | CliError::Read { .. }
            | CliError::Json { .. }
            | CliError::Format { .. } => 2,
            CliError::Core(
                E::InvalidConfig(_)
                | E::InvalidMode(_)
                | E::GammaOutOfRange { .. }
                | E::UnsupportedCombination { .. }
                | E::DenseCapExceeded { .. }
                | E::NotADag
                | E::NotALine
                | E::NotDirected
                | E::CycleDetected { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
