use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the toolkit.
///
/// The variants follow the failure classes surfaced by the command line:
/// configuration problems, bad input data, and failures while training,
/// evaluating or optimizing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error in {path}: {message}")]
    DataFile { path: PathBuf, message: String },

    #[error("training error at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("optimization error at step {step}: {message}")]
    Optimization { step: usize, message: String },

    #[error("numeric guard: {0}")]
    NumericGuard(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn data_file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::DataFile {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Error::Evaluation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::DataFile { .. } | Error::Io { .. } => 3,
            Error::Training { .. }
            | Error::Evaluation(_)
            | Error::Optimization { .. }
            | Error::NumericGuard(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
