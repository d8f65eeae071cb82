use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] avscene_autodiff::Error),

    #[error("audio: {0}")]
    Audio(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backbone layer `{layer}`: {message}")]
    Backbone { layer: String, message: String },

    #[error("model has no `{0}` head")]
    MissingHead(String),

    #[error("stage `{stage}` requires {requirement}")]
    Prerequisite { stage: String, requirement: String },

    #[error("frozen parameter `{0}` changed during training")]
    FrozenViolation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
