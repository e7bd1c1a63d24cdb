use std::fmt;
use std::path::PathBuf;

/// Which scatter matrix failed a positive-definiteness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterKind {
    Similarity,
    Dissimilarity,
}

impl fmt::Display for ScatterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScatterKind::Similarity => f.write_str("similarity"),
            ScatterKind::Dissimilarity => f.write_str("dissimilarity"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("data length mismatch: expected {expected} values, got {found}")]
    InvalidLength { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("symmetric eigensolver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error(
        "{which} scatter matrix is singular or near-singular{}; \
         use the regularized solver (increase --lambda, e.g. 0.1)",
        dataset.as_ref().map(|d| format!(" for dataset '{d}'")).unwrap_or_default()
    )]
    SingularScatter {
        which: ScatterKind,
        dataset: Option<String>,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),

    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: line {line}: expected {expected} fields, found {found}", path.display())]
    InconsistentWidth {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}: file contains no data rows", path.display())]
    EmptyFile { path: PathBuf },

    #[error("unsupported metric file version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt metric file: {0}")]
    CorruptMatrix(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures that come from the numerics rather than from input
    /// files or arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::NoConvergence { .. }
                | Error::SingularScatter { .. }
        )
    }

    /// True for failures caused by unreadable or malformed input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InconsistentWidth { .. }
                | Error::EmptyFile { .. }
                | Error::VersionMismatch { .. }
                | Error::CorruptMatrix(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::InvalidDataset(_)
                | Error::InvalidConstraints(_)
                | Error::DimensionMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
