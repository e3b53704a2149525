use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NcsrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NcsrError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular within tolerance: pivot {pivot} has magnitude {magnitude:e}")]
    Singular { pivot: usize, magnitude: f64 },

    #[error("non-finite value produced by layer `{layer}`")]
    NonFinite { layer: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NcsrError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NcsrError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
