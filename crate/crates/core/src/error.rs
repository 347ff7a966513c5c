//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("non-finite loss in phase {phase} epoch {epoch}: {detail}")]
    NonFiniteLoss {
        phase: String,
        epoch: usize,
        detail: String,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Dependency(_) => "dependency",
            Error::Incompatible(_) => "incompatible",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code for the category (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::DegenerateGeometry(_) | Error::Shape { .. } => 2,
            Error::Config(_) | Error::Parse { .. } => 3,
            Error::Dependency(_) | Error::Incompatible(_) => 4,
            Error::NonFiniteLoss { .. } => 5,
            Error::Io(_) | Error::Image(_) | Error::Json(_) => 6,
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
