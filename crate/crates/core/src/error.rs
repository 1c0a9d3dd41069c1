use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments or data handed to an operation.
    #[error("invalid input: {0}")]
    Input(String),

    /// A mathematically undefined request (empty complement, no positive spectrum, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Linearly dependent vectors fed to Gram-Schmidt.
    #[error("vector {index} is linearly dependent on its predecessors")]
    Degenerate { index: usize },

    /// Non-finite values appeared in an iterative solve.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// CSV syntax or content problem with a location.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
