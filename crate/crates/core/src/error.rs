use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse: line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bounds: line {line}: {field} id {value} is not below {bound}")]
    Bounds {
        line: usize,
        field: &'static str,
        value: u64,
        bound: u64,
    },

    #[error("split: {0}")]
    Split(String),

    #[error("sequencing: expected snapshot {expected}, got {got}")]
    Sequencing { expected: usize, got: usize },

    #[error("parameter: {0}")]
    Parameter(String),

    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: &'static str },

    #[error("capacity: {0}")]
    Capacity(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used for the CLI's one-line error format.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Bounds { .. } => "bounds",
            Error::Split(_) => "split",
            Error::Sequencing { .. } => "sequencing",
            Error::Parameter(_) => "parameter",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::Capacity(_) => "capacity",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
