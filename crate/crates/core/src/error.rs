use thiserror::Error;

/// Errors produced by the training, scoring and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty sample set: {0}")]
    EmptySet(&'static str),

    #[error("segment has {available} samples, need more than {required}")]
    InsufficientSamples { available: usize, required: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("{count} previous segments exceed the exhaustive search cap of {cap}")]
    TooManySubsets { count: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("report serialization failed: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape { expected, actual })
    }
}
