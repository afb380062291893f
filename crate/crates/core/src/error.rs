use std::fmt;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Incompatible shapes or malformed structure.
    #[error("structural error: {0}")]
    Structural(String),

    /// An operation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The input violates one or more invariants.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A malformed input record.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A computation would exceed its resource budget.
    #[error("resource limit: {0}")]
    Resource(String),

    /// Power iteration failed to reach the requested residual.
    #[error("stationary solve did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// A wall-clock budget ran out.
    #[error("timed out after {0:.3} s")]
    Timeout(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Resource,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Structural(_) | Error::Io(_) => ErrorClass::Usage,
            Error::Validation(_) | Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => {
                ErrorClass::Validation
            }
            Error::Resource(_) | Error::Timeout(_) => ErrorClass::Resource,
            Error::Numeric(_) | Error::Convergence { .. } => ErrorClass::Numeric,
        }
    }

    pub(crate) fn param(msg: impl fmt::Display) -> Self {
        Error::Parameter(msg.to_string())
    }

    pub(crate) fn shape(msg: impl fmt::Display) -> Self {
        Error::Structural(msg.to_string())
    }
}
