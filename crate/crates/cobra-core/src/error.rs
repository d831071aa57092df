//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint tensor `{name}`: {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("dataset: {0}")]
    Data(String),

    #[error("sample `{id}`: {reason}")]
    Sample { id: String, reason: String },

    #[error("non-finite loss at epoch {epoch} step {step}, batch ids {batch_ids:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("png: {0}")]
    Png(String),

    #[error("external command: {0}")]
    External(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
