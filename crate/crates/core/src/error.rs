use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HsrError>;

#[derive(Debug, Error)]
pub enum HsrError {
    /// Caller violated an operation's contract (shape mismatch, unknown id, empty input).
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN/Inf or an out-of-range probability surfaced during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input file content.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Semantically invalid input (empty trust file, bad config value, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A checkpoint or dataset does not match what the caller expects.
    #[error("compatibility error: {0}")]
    Compat(String),

    /// A metric that is not defined for the given input, e.g. AUC with a single class.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HsrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HsrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        HsrError::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
