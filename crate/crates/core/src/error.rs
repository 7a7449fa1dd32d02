use std::io;

use thiserror::Error;

/// Errors raised anywhere in the hashing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("infeasible sampling: {0}")]
    InfeasibleSampling(String),

    #[error("training diverged at step {step}: non-finite {stream} loss")]
    Divergence { step: usize, stream: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
