use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the support of the distribution or operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("invalid prior: {0}")]
    Prior(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A synthetic dataset would not fit in the configured memory budget.
    #[error("dataset too large: {bytes} bytes requested, budget is {budget} bytes")]
    TooLarge { bytes: usize, budget: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Error {
    Error::Shape { expected: format!("{expected:?}"), got: format!("{got:?}") }
}
