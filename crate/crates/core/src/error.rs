use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("training diverged at update {update}: mean loss {loss}")]
    Divergence { update: u64, loss: f64 },

    #[error("point lies on the separator boundary (w*.x = 0)")]
    OnBoundary,

    #[error("data is not linearly separable: {0}")]
    NotSeparable(String),

    #[error("solver failed after {iterations} iterations: {reason} (stationarity {stationarity:.3e}, feasibility {feasibility:.3e}, complementarity {complementarity:.3e})")]
    Solver {
        reason: String,
        iterations: usize,
        stationarity: f64,
        feasibility: f64,
        complementarity: f64,
    },

    #[error("generator error: {0}")]
    Generator(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
