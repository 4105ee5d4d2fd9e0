use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("unsupported container version {found:?} (expected {expected:?})")]
    Version { found: char, expected: char },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("power iteration did not converge after {iterations} iterations (change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
