use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("mesh parse error: {0}")]
    MeshParse(String),
    #[error("mesh has no UV coordinates")]
    MissingUv,
    #[error("mesh is not triangulated: {0}")]
    NotTriangulated(String),
    #[error("face index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("uv coordinate {value} of face {face} lies outside [0,1]")]
    UvOutOfRange { face: usize, value: f64 },
    #[error("dimension mismatch: {what} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("invalid label {label} (class set has {classes} classes)")]
    InvalidLabel { label: u8, classes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no style reference available for class '{0}'")]
    NoReference(String),
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("degenerate bounding box")]
    DegenerateAabb,
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("non-finite loss term '{0}'")]
    NonFiniteLoss(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("denoiser backend '{0}' is unavailable")]
    BackendUnavailable(String),
    #[error("denoiser backend failed on window {window}: {message}")]
    Backend { window: usize, message: String },
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
