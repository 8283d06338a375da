use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("all {0} frames already selected")]
    Exhausted(usize),

    #[error("label mode mismatch: {0}")]
    Mode(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{}: field `{field}`: {detail}", path.display())]
    Format {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::Index { .. } => "index",
            Error::Empty(_) => "empty",
            Error::Exhausted(_) => "exhausted",
            Error::Mode(_) => "mode",
            Error::Contract(_) => "contract",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
