//! Verification, benchmarking and training harness around `chimera-core`.
//!
//! The library holds everything the `chimera` binary does so that it can be
//! driven (and tested) in-process: graph sources and file formats, the
//! invariant suites, the timing harness, versioned JSON reports and the
//! command runners.

pub mod bench;
pub mod commands;
pub mod error;
pub mod formats;
pub mod report;
pub mod source;
pub mod suites;

pub use chimera_core as core;
pub use commands::{run, Cli, Command, Outcome};
pub use error::{CliError, CliResult};
pub use report::{Check, Report, Status};
