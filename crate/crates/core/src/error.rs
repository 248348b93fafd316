use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unusable corpus: {0}")]
    EmptyCorpus(String),

    #[error("unknown disease `{0}`")]
    UnknownDisease(String),

    #[error("disease index {index} out of range for {count} classes")]
    DiseaseIndex { index: usize, count: usize },

    #[error("token index {index} outside vocabulary of size {size}")]
    TokenIndex { index: usize, size: usize },

    #[error("heatmap has no positive pixel")]
    EmptyHeatmap,

    #[error("degenerate crop: {0}")]
    DegenerateCrop(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("missing artifact for `{role}`: {path}")]
    MissingArtifact { role: String, path: PathBuf },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("malformed artifact {path}: {detail}")]
    MalformedArtifact { path: PathBuf, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than a defect or
    /// environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::Diverged { .. })
    }
}
