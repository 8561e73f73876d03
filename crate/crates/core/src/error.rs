use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two values that must agree in size do not.
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot initialize: keypoint {keypoint} is annotated in no training pose")]
    UnannotatedKeypoint { keypoint: usize },

    #[error("training diverged: non-finite gradient in {layer}")]
    GradientDivergence { layer: String },

    #[error("training diverged at stage {stage}, epoch {epoch}: loss is not finite")]
    LossDivergence { stage: usize, epoch: usize },

    #[error("inference produced a non-finite correction at step {step}")]
    InferenceDivergence { step: usize },

    #[error("example {id}: {source}")]
    Example {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    /// Misuse of an API, e.g. a backward pass with a cache from other parameters.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated blob, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("{path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { what, expected, found }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
