use thiserror::Error;

/// Errors produced by the modelling, fitting and control routines.
#[derive(Debug, Error)]
pub enum KoopError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("fit failed: numerical rank {rank} of the {rows}x{cols} lifted data matrix is below the dictionary size {required}")]
    FitFailure {
        rank: usize,
        rows: usize,
        cols: usize,
        required: usize,
    },

    #[error("input {0:?} lies outside the input box")]
    OutOfDomain(Vec<f64>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl KoopError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KoopError::InvalidInput(msg.into())
    }
}

pub type Result<T, E = KoopError> = std::result::Result<T, E>;
