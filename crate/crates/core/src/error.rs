use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid phantom primitive: {0}")]
    Primitive(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("geometry digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("non-finite value in {context} at iteration {iteration}")]
    NonFinite { context: &'static str, iteration: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("adjoint check failed: relative error {0:e}")]
    AdjointMismatch(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
