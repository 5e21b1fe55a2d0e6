//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameter, inconsistent model spec, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes or lengths disagree at an API boundary.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed caller-supplied data (empty list, non-one-hot target, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A NaN or infinity appeared where finite arithmetic is required.
    #[error("numeric error: non-finite value in {0}")]
    NonFinite(String),

    /// The event loop reached an impossible state.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Version bookkeeping between sender and receiver is inconsistent.
    #[error("version error: {0}")]
    Version(String),

    /// A delta referenced a base model version that is no longer cached.
    #[error("staleness cache miss: base version {0} not cached")]
    StalenessCache(u64),

    /// A transfer failed its checksum or structural validation.
    #[error("corrupt transfer: {0}")]
    Corruption(String),

    /// A CSV column named in the schema does not exist (or vice versa).
    #[error("schema error: {0}")]
    Schema(String),

    /// A partition quota cannot be satisfied by the dataset.
    #[error("partition error: {0}")]
    Partition(String),

    /// Internal invariant violated; indicates a bug, not bad input.
    #[error("logic error: {0}")]
    Logic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
