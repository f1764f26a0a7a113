use std::path::PathBuf;

/// Errors raised across the toolkit.
///
/// Variants are grouped by category so front-ends can map them to exit codes
/// with [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {context} of size {len}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid anchor set: {0}")]
    InvalidAnchors(String),

    #[error("matrix is rank deficient: non-positive pivot {pivot:e} at column {column}")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("linear transform of vertex {vertex} is singular (|det| = {det:e}) for pose {pose}")]
    SingularTransform { vertex: usize, pose: usize, det: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("size limit exceeded: {size} > {limit} ({context})")]
    SizeLimit {
        context: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("content hash mismatch for {context}: expected {expected}, found {found}")]
    HashMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Input,
    Numerical,
    Integrity,
    Config,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::IsolatedVertex(_)
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::InvalidAnchors(_)
            | Error::Format(_)
            | Error::Json(_) => ErrorCategory::Input,
            Error::RankDeficient { .. }
            | Error::SingularTransform { .. }
            | Error::Diverged { .. } => ErrorCategory::Numerical,
            Error::HashMismatch { .. } => ErrorCategory::Integrity,
            Error::SizeLimit { .. } | Error::Config(_) => ErrorCategory::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
