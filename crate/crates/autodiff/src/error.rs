use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op} expects a rank-2 tensor, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },

    #[error("loss must hold exactly one value, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("slice {start}..{end} out of range for extent {extent}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        extent: usize,
    },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AutodiffError {
    fn from(err: std::io::Error) -> Self {
        AutodiffError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
