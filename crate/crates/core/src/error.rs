use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid label {0}: expected an integer in 1..=5")]
    Label(i64),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("model artifact: {0}")]
    Artifact(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

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

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::NonFinite(_) => 3,
            Error::Io { .. }
            | Error::Row { .. }
            | Error::Label(_)
            | Error::Data(_)
            | Error::ZeroVariance { .. }
            | Error::Shape(_)
            | Error::Artifact(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
