use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WaflError>;

#[derive(Debug, Error)]
pub enum WaflError {
    /// Caller broke a shape or dimension contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Caller supplied an argument outside its allowed domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: malformed file at byte offset {offset}: {reason}")]
    Format { path: PathBuf, offset: u64, reason: String },

    /// A configuration field failed validation.
    #[error("config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl WaflError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}
