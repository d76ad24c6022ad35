use std::fmt;

use barrierflow_core::Error as CoreError;
use serde_json::json;

pub const EXIT_OK: u8 = 0;
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, problem files or parameter grids.
    Config(String),
    /// A numerical routine failed on a valid configuration.
    Solver(CoreError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
        }
    }

    /// One-line machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        let variant = match self {
            CliError::Solver(e) => Some(variant_name(e)),
            _ => None,
        };
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "variant": variant,
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

fn variant_name(e: &CoreError) -> &'static str {
    match e {
        CoreError::DomainViolation(_) => "DomainViolation",
        CoreError::SingularMetric => "SingularMetric",
        CoreError::RangeViolation => "RangeViolation",
        CoreError::NoConvergence { .. } => "NoConvergence",
        CoreError::RankDeficient => "RankDeficient",
        CoreError::RetractionFailed { .. } => "RetractionFailed",
        CoreError::StepRejected { .. } => "StepRejected",
        CoreError::NotSelfConcordant(_) => "NotSelfConcordant",
        CoreError::DualNewtonFailed { .. } => "DualNewtonFailed",
        CoreError::UnknownProblem(_) => "UnknownProblem",
        CoreError::UnknownKernel(_) => "UnknownKernel",
        CoreError::ExtensionUnavailable(_) => "ExtensionUnavailable",
        CoreError::UnsupportedRegion => "UnsupportedRegion",
        CoreError::DimensionMismatch { .. } => "DimensionMismatch",
        CoreError::InvalidConfig(_) => "InvalidConfig",
        CoreError::NotSpurious => "NotSpurious",
        CoreError::NoExit { .. } => "NoExit",
        CoreError::InsufficientSamples { .. } => "InsufficientSamples",
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownProblem(_)
            | CoreError::UnknownKernel(_)
            | CoreError::InvalidConfig(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::NotSelfConcordant(_) => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
