use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("client has no parameters yet (never synced)")]
    NotSynced,

    #[error("model kind mismatch: wanted {wanted}, got {got}")]
    KindMismatch { wanted: String, got: String },

    #[error(transparent)]
    Bundle(#[from] crate::sync::bundle::BundleError),

    #[error(transparent)]
    Transport(#[from] crate::sync::transport::TransportError),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
