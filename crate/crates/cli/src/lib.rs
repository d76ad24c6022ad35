//! Command-line front end for `barrierflow-core`: solver runs, flow
//! integration, escape experiments, diagnostics and parameter sweeps, with
//! CSV traces, JSON summaries and run manifests.

pub mod commands;
pub mod error;
pub mod output;
pub mod problems;
pub mod settings;

pub use commands::{dispatch, Cli, Outcome};
pub use error::{CliError, CliResult};
