use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range or shapes disagree.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The input carries no usable mass (all-zero matrix, empty column, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Unsupported generator or solver configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
