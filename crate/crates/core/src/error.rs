//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("external noiser failed: {0}")]
    Subprocess(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
