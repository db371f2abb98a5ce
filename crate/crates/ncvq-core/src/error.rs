use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("dataset `{name}`: {msg}")]
    Data { name: String, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint/config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("non-finite {part} at step {step}; aborting")]
    NonFinite { part: String, step: usize },

    #[error("shape: {0}")]
    Shape(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub fn data(name: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Data {
            name: name.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
