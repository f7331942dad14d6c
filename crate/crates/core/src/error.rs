use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcmiError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("dimension cap exceeded: {0}")]
    Cap(String),
    #[error("query mode error: {0}")]
    Mode(String),
    #[error("support error: {0}")]
    Support(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("entropy error: {0}")]
    Entropy(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl QcmiError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            QcmiError::Layout(_) => "layout",
            QcmiError::Validation(_) => "validation",
            QcmiError::Singularity(_) => "singularity",
            QcmiError::Cap(_) => "cap",
            QcmiError::Mode(_) => "mode",
            QcmiError::Support(_) => "support",
            QcmiError::Precondition(_) => "precondition",
            QcmiError::Entropy(_) => "entropy",
            QcmiError::Construction(_) => "construction",
            QcmiError::Config(_) => "config",
            QcmiError::Serialization(_) => "serialization",
            QcmiError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, QcmiError>;
