use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The power exponent lies outside the open window in which the Pohozaev
    /// and Nehari identities can hold simultaneously, so the equation has no
    /// nontrivial weak solution to look for.
    #[error(
        "refusing to solve: q = {q} lies outside ({q_lower}, {q_upper}); \
         the equation does not have nontrivial weak solutions there"
    )]
    Nonexistence { q: f64, q_lower: f64, q_upper: f64 },

    #[error("kernel cache {path} is corrupt ({reason}); delete it to rebuild the kernel")]
    CacheCorrupt { path: PathBuf, reason: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
