//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("kernel spec has no closed-form psi statistics: {0}")]
    PsiUnsupported(String),

    #[error("Cholesky factorization failed after raising jitter to {max_jitter:e}")]
    CholeskyFailure { max_jitter: f64 },

    #[error("column {column} has (near-)zero variance; cannot normalize")]
    ZeroVariance { column: &'static str },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{line}: {reason}")]
    PairFileParse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("pair file {path} has {cols} columns; only two-variable pairs are supported")]
    TooManyColumns { path: String, cols: usize },

    #[error("all {restarts} restarts diverged while fitting {model}")]
    AllRestartsDiverged { model: String, restarts: usize },

    #[error("fit failed for model {model}: {source}")]
    FitFailed {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
