use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum RmtError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("spike construction failed: {0}")]
    Construction(String),

    /// The evaluation point lies at or inside the spectrum, so the resolvent is undefined.
    #[error("resolvent pole: rho = {rho} is not above the largest eigenvalue {lambda_max}")]
    Pole { rho: f64, lambda_max: f64 },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = RmtError> = std::result::Result<T, E>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(RmtError::Parameter(msg.into()))
}
