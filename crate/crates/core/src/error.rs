use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{path}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("degenerate gradient: both rates equal {rate}")]
    DegenerateGradient { rate: f64 },

    #[error("{what} requires a non-empty input")]
    EmptyInput { what: &'static str },

    #[error("reward term references missing metric `{0}`")]
    MissingMetric(String),

    #[error("unknown reward preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("bandit update needs {need} observed samples, have {have}")]
    NotEnoughSamples { have: usize, need: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
