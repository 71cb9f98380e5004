use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate landmark set")]
    DegenerateLandmarks,
    #[error("expected {expected} landmarks, found {found}")]
    LandmarkCount { expected: usize, found: usize },
    #[error("landmarks are not normalized")]
    NotNormalized,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("identity encoder absent")]
    IdentityEncoderAbsent,
    #[error("provider missing: {0}")]
    ProviderMissing(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("non-finite {name} loss at iteration {iteration}")]
    NonFiniteLoss { name: String, iteration: u64 },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config: {0}")]
    Config(String),
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
