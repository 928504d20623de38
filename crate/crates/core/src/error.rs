//! Error types shared across the engine.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not satisfy an operation's shape contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A documented precondition was violated (e.g. fusing an already
    /// fused network, a biased expand conv).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad argument outside the shape/contract categories.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Non-finite loss or other runaway numeric state.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("clip directory: {0}")]
    ClipDir(String),

    #[error(transparent)]
    WeightFile(#[from] WeightFileError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("config: {0}")]
    Config(String),
}

/// Weight-file decoding failures. Each variant is a distinct condition so
/// callers can report truncation separately from corruption.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightFileError {
    #[error("bad magic (expected \"RVSR\")")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after last tensor record")]
    TrailingBytes,
    #[error("tensor dims mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
}
