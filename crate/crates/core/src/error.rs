use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing pairwise score for ({i}, {j})")]
    MissingPair { i: String, j: String },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("parameter layout of client `{client}` does not match client `{reference}`")]
    LayoutMismatch { reference: String, client: String },

    #[error("client `{client}` reported zero training samples")]
    ZeroSamples { client: String },

    #[error("client `{client}`: {source}")]
    Client {
        client: String,
        #[source]
        source: Box<Error>,
    },

    #[error("key sets differ: {0}")]
    KeyMismatch(String),

    #[error("ranking has no at-risk students")]
    NoAtRisk,

    #[error("model incompatible with input: {0}")]
    IncompatibleModel(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable code used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::EmptyFile { .. } | Error::MissingColumn { .. } | Error::Record { .. } | Error::Csv(_) => {
                "E_DATA"
            }
            Error::Json(_) => "E_CONFIG",
            Error::EmptyInput(_) | Error::InvalidArgument(_) | Error::KeyMismatch(_) => "E_INPUT",
            Error::DimensionMismatch { .. } | Error::IncompatibleModel(_) | Error::ModelFormat(_) => "E_MODEL",
            Error::MissingPair { .. } => "E_PAIRS",
            Error::NonFiniteLoss { .. } => "E_TRAIN",
            Error::LayoutMismatch { .. } | Error::ZeroSamples { .. } | Error::Client { .. } => "E_FEDERATION",
            Error::NoAtRisk => "E_EVAL",
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Json(_) => 3,
            Error::IncompatibleModel(_) | Error::ModelFormat(_) | Error::DimensionMismatch { .. } => 4,
            _ => 1,
        }
    }
}
