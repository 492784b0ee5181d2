use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes, sizes or configuration does not hold.
    #[error("specification error: {0}")]
    Spec(String),

    /// A forward or backward pass produced NaN or infinity.
    #[error("non-finite value in {location}")]
    Numeric { location: String },

    /// An API was driven in the wrong order (e.g. backward twice).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed IDX input.
    #[error("{path}: {detail} (at byte offset {offset})")]
    Ingest {
        path: PathBuf,
        offset: usize,
        detail: String,
    },

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn spec_err(msg: impl Into<String>) -> Error {
    Error::Spec(msg.into())
}
