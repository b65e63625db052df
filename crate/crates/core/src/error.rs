use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("attention over an empty memory (substitute the null token)")]
    EmptyMemory,
    #[error("masked softmax row {row} has no admissible entries")]
    EmptyMaskRow { row: usize },
    #[error("duplicate actor id {0} in consistency batch")]
    DuplicateId(u64),
    #[error("consistency batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty actor set")]
    NoActors,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected CTF1")]
    BadMagic { path: PathBuf },
    #[error("{path}: short read ({detail})")]
    ShortRead { path: PathBuf, detail: String },
    #[error("{path}: shape mismatch, expected {expected}, found {found:?}")]
    DataShape {
        path: PathBuf,
        expected: String,
        found: Vec<usize>,
    },
    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numeric kind (as opposed to validation or IO).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
