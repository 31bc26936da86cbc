use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate image_id `{0}`")]
    DuplicateId(String),

    #[error("train record `{0}` has no landmark_id")]
    MissingLandmark(String),

    #[error("unknown continent `{0}`")]
    UnknownContinent(String),

    #[error("inconsistent metadata: {0}")]
    Inconsistent(String),

    #[error("bad embedding file: {0}")]
    Format(String),

    #[error("unexpected end of data")]
    UnexpectedEof,

    #[error("row for `{0}` has zero norm")]
    ZeroRow(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("similarity matrix needs {required} bytes, budget is {allowed} bytes")]
    Budget { required: u64, allowed: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing {kind} for `{id}`")]
    Missing { kind: &'static str, id: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
