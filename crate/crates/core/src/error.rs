use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {malformed} malformed line(s) (first at line {first_line})")]
    Malformed {
        path: PathBuf,
        malformed: usize,
        first_line: usize,
    },

    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: &'static str, reason: String },

    #[error("timestamp {timestamp} precedes window origin {origin}")]
    BeforeOrigin { timestamp: i64, origin: i64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty sequence passed to dynamic time warping")]
    EmptySequence,

    #[error("no embedding for item `{0}`")]
    MissingEmbedding(String),

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("duplicate id `{0}`")]
    Duplicate(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }
}
