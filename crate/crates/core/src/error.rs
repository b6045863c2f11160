use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("condition inapplicable: {0}")]
    ConditionInapplicable(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("projection failed: {0}")]
    ProjectionFailure(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 1 is reserved for usage errors (reported by the argument parser or a
    /// bad config), 2 for data problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Parse { .. }
            | Error::Dimension(_)
            | Error::Infeasible(_) => 2,
            Error::Numeric(_)
            | Error::DegenerateSpectrum(_)
            | Error::ConditionInapplicable(_)
            | Error::ProjectionFailure(_)
            | Error::UndefinedMetric(_) => 3,
        }
    }
}
