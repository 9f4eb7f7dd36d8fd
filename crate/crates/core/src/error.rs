//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameter or configuration.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A configuration file could not be parsed or is inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// An objective evaluation produced a non-finite value.
    #[error("non-finite objective value at probe point {point:?}{context}")]
    NonFinite { point: Vec<f64>, context: String },

    /// The local linear system is singular or indefinite.
    #[error("indefinite or singular local system (lambda_min = {lambda_min:.6e}){context}")]
    Conditioning { lambda_min: f64, context: String },

    /// Spectral decomposition failed or produced a degenerate spectrum.
    #[error("spectral analysis failed: {0}")]
    Spectral(String),

    /// The centralized reference solver did not reach the requested tolerance.
    #[error("reference solver stalled after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    SolverStalled { iterations: usize, grad_norm: f64 },

    /// A dual iterate has a component outside the range of the penalty matrix.
    #[error("dual variable leaves the penalty matrix range (null-space component {norm:.3e})")]
    DualConsistency { norm: f64 },

    /// The proximal-block margin condition does not hold for the supplied D.
    #[error("proximal margin condition violated: {0}")]
    MarginCondition(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code mandated by the CLI contract: 2 for parameter
    /// problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::NonFinite { .. }
            | Error::Conditioning { .. }
            | Error::Spectral(_)
            | Error::SolverStalled { .. }
            | Error::DualConsistency { .. }
            | Error::MarginCondition(_) => 3,
        }
    }
}
