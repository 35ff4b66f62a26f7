//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration asked for something inconsistent (e.g. adapter and
    /// backbone shapes that cannot be joined element-wise).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied value violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor shapes did not line up. For valid network parameters this is
    /// an internal invariant violation, not a recoverable condition.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Loading a file (weights, sequence, config) failed.
    #[error("load error: {0}")]
    Load(String),

    /// Training could not proceed (degenerate sample set, empty dataset, ...).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
