use thiserror::Error;

/// Errors raised across the simulator and the certificate computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible graph: {0}")]
    InfeasibleGraph(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("schema error: column `{0}` not found")]
    Schema(String),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("reference solver did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    ConvergenceFailure { iterations: usize, grad_norm: f64 },

    #[error("divergence at iteration {iteration}: non-finite {quantity} at agent {agent}")]
    Divergence {
        iteration: usize,
        agent: usize,
        quantity: &'static str,
    },

    #[error("certificate violation: {0}")]
    CertificateViolation(String),

    #[error("config error: {0}")]
    Config(String),

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
