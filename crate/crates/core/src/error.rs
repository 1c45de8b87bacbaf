use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// The variants split into data/validation problems (bad manifests, bad
/// arguments, shape mismatches) and internal failures (I/O, encoding); the
/// CLI maps them onto distinct exit codes via [`Error::is_data_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: expected {expected}, got {actual:?}")]
    Shape {
        node: String,
        expected: String,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("no FOV detected")]
    NoFov,

    #[error("insufficient pairs: {0} effective pairs after dropping zero differences (need at least 5)")]
    InsufficientPairs(usize),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("unreadable images: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    UnreadableImages(Vec<PathBuf>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by user data or arguments rather than the
    /// toolkit itself.
    pub fn is_data_error(&self) -> bool {
        use std::io::ErrorKind;
        match self {
            Error::Io(e) => matches!(e.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidData),
            Error::Json(_) | Error::BackwardBeforeForward | Error::MissingGrad(_) => false,
            _ => true,
        }
    }
}
