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

    #[error("missing path: {0}")]
    MissingPath(PathBuf),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("sample out of range: {value} exceeds maxval {maxval}")]
    SampleOutOfRange { value: u32, maxval: u32 },

    #[error("inconsistent dimensions: expected {expected:?}, found {found:?}")]
    InconsistentDimensions {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {what} at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("model not trained: {0}")]
    Untrained(&'static str),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::parse("csv", line, e.to_string())
    }
}
