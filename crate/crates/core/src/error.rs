//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A dimension-level problem that is not a binary mismatch (empty axis,
    /// axis out of range, index out of bounds).
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sequence does not fit in the model's context window.
    #[error("sequence length {len} exceeds capacity {max}")]
    Capacity { len: usize, max: usize },

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint or dataset file could not be read back; names the field
    /// that failed so corruption is diagnosable.
    #[error("load error in {field}: {msg}")]
    Load { field: &'static str, msg: String },

    /// A training step produced a non-finite loss and was aborted.
    #[error("non-finite loss at step {step}: {value}")]
    NumericAbort { step: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
