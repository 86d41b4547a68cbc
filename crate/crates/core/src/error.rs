use std::path::PathBuf;

use dispatcher_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence of {len} tokens exceeds capacity {max}")]
    Capacity { len: usize, max: usize },
    #[error("token id {id} at batch {batch}, position {position} is outside the vocabulary of {vocab}")]
    TokenOutOfRange {
        batch: usize,
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("{0}")]
    Data(String),
    #[error("invalid {field}: {msg}")]
    Config { field: String, msg: String },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("non-finite gradient in parameter {param}")]
    NonFinite { param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
