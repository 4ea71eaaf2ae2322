use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transformation: {0}")]
    Transform(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every joint state had zero probability even in the log domain.
    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error(transparent)]
    ModelFile(#[from] ModelFileError),

    #[error("{path}: {message}")]
    Frame { path: PathBuf, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while loading a serialized model.
#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("unknown model family `{0}`")]
    UnknownFamily(String),

    #[error("model family mismatch: expected {expected}, found {found}")]
    FamilyMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("malformed model file: {0}")]
    Malformed(String),
}
