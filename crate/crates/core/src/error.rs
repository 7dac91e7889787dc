use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is numerically zero")]
    ZeroNorm,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{speakers} speakers cannot be one-hot encoded in {dim} dimensions")]
    TooManySpeakers { speakers: usize, dim: usize },

    #[error("unknown speaker `{0}`")]
    UnknownSpeaker(String),

    #[error("attractor set is empty")]
    EmptyAttractors,

    #[error("score set has an empty class ({0})")]
    EmptyClass(&'static str),

    #[error("invalid t-DCF coefficients C1={c1}, C2={c2}; both must be positive")]
    InvalidCoefficients { c1: f64, c2: f64 },

    #[error("partition `{0}` has no enrollment utterances")]
    MissingEnrollment(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
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

    /// Errors raised by numerical breakdown rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroNorm | Error::NonFiniteLoss { .. } | Error::DegenerateData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
