use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("joint {dim} never moves in the training data (range {range:e})")]
    DegenerateRange { dim: usize, range: f64 },

    #[error("softmax block is all zero")]
    AllZero,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("closed-loop ratio {0} < 1 requires a teacher signal")]
    MissingTeacher(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: expected {expected} joint columns, found {found}")]
    InconsistentDims {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("unsupported checkpoint format {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: &'static str },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("need at least {needed} patterns, have {available}")]
    InsufficientPatterns { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
