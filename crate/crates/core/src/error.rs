//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (batch sizes, learning rates, grids).
    #[error("configuration error: {0}")]
    Config(String),

    /// A scalar argument outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A model could not be evaluated at the requested parameter.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// The resampled chain produced a non-finite iterate, gradient or Hessian.
    #[error("chain aborted at iteration {iteration}: {reason}")]
    ChainAbort {
        iteration: usize,
        reason: String,
        last_finite: Option<Vec<f64>>,
    },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("share inversion did not converge after {iterations} iterations (gap {gap:e})")]
    Inversion { iterations: usize, gap: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}
