//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations{context}")]
    Solver {
        residual: f64,
        iterations: usize,
        context: String,
    },

    /// A numeric procedure failed (non-finite values, factorization breakdown).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted file did not match the expected container format.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
