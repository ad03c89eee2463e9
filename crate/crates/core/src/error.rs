use thiserror::Error;

/// Errors produced by model construction, fitting and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("covariance factorization failed; smallest eigenvalue estimate {smallest_eigenvalue:.3e} after jitter {jitter:.1e}")]
    Factorization {
        smallest_eigenvalue: f64,
        jitter: f64,
    },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("latent mode search failed for event {event}: {message}")]
    LatentMode { event: usize, message: String },

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
