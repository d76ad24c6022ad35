use alloc::string::String;

/// Failures raised by the kernels, geometry, solvers and diagnostics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point outside the open domain: {0}")]
    DomainViolation(String),
    #[error("metric factorization failed; the point is numerically on the boundary")]
    SingularMetric,
    #[error("dual point is outside the range of the mirror map")]
    RangeViolation,
    #[error("Newton iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("constraint Jacobian is rank deficient")]
    RankDeficient,
    #[error("retraction could not restore feasibility after {halvings} halvings")]
    RetractionFailed { halvings: usize },
    #[error("step size {eta} exceeds the safe cap {cap} and the raw step leaves the region")]
    StepRejected { eta: f64, cap: f64 },
    #[error("kernel `{0}` is not a logarithmically homogeneous self-concordant barrier")]
    NotSelfConcordant(String),
    #[error("dual Newton iteration for the mirror step failed (residual {residual:e})")]
    DualNewtonFailed { residual: f64 },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("unknown kernel id `{0}`")]
    UnknownKernel(String),
    #[error("no continuous boundary extension of the inverse metric for kernel `{0}`")]
    ExtensionUnavailable(String),
    #[error("operation requires the nonnegative orthant as open region")]
    UnsupportedRegion,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reference point is not classified as spurious")]
    NotSpurious,
    #[error("trajectory did not leave the neighborhood before t = {t_max}")]
    NoExit { t_max: f64 },
    #[error("need at least {needed} samples, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: &str) -> Error {
    Error::DomainViolation(String::from(msg))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
