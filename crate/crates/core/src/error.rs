use std::io;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data contract violated: {0}")]
    DataContract(String),

    #[error("non-finite {term} at epoch {epoch}, batch {batch}")]
    NonFinite {
        term: String,
        epoch: usize,
        batch: usize,
    },

    #[error("degenerate embedding: norm below 1e-12")]
    DegenerateEmbedding,

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 usage, 3 numeric failure, 4 I/O or file format,
    /// 5 data contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::NonFinite { .. } | Error::DegenerateEmbedding => 3,
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
            Error::Shape(_) | Error::DataContract(_) => 5,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
