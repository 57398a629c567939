use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of its valid range.
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    /// Well-formed input that violates a data invariant (duplicate ids, missing predictions).
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Instance exceeds the exact solver's search bound.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A schedule log that cannot have been produced by a valid simulation.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable tag used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Capacity(_) => "capacity",
            Error::Integrity(_) => "integrity",
            Error::Io { .. } => "io",
        }
    }
}
