//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, model building, training and serving.
#[derive(Debug, Error)]
pub enum Error {
    /// A line in an input file could not be parsed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A row carried a vector whose length disagrees with the rest of the file.
    #[error("{path}:{line}: vector of length {got}, catalog dimension is {expected}")]
    Schema {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("duplicate sku {0:?}")]
    DuplicateSku(String),

    #[error("unknown sku {0:?}")]
    UnknownSku(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input with no usable variance or mass (e.g. identical vectors fed to PCA).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("character {0:?} is not in the model vocabulary")]
    OutOfVocabulary(char),

    #[error("session {0:?} has no product views")]
    EmptySession(String),

    #[error("unknown session {0:?}")]
    UnknownSession(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
