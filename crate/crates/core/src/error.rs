use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("sample period mismatch: {0} s vs {1} s")]
    RateMismatch(f64, f64),

    #[error("frequency {omega} rad/s is not resolvable: {reason}")]
    Unresolvable { omega: f64, reason: String },

    #[error("zero-energy signal: {0}")]
    ZeroEnergy(&'static str),

    #[error("model has a zero in the closed right half-plane at {0}")]
    NonMinimumPhase(String),

    #[error("model is unstable: spectral abscissa {0}")]
    Unstable(f64),

    #[error("evaluation at a pole (omega = {0} rad/s)")]
    AtPole(f64),

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("matrix exponential overflow")]
    Overflow,

    #[error("infeasible synthesis problem: {0}")]
    Infeasible(String),

    #[error("solver reached the iteration limit ({0}) before converging")]
    IterationLimit(usize),

    #[error("passivity certification failed: dense-grid minimum eigenvalue {0:e}")]
    NotCertified(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing file or directory: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
