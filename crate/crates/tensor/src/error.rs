use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("tensor has no trace to a differentiable parameter")]
    NoTrace,
    #[error("backward already ran on this graph; reset gradients first")]
    AlreadyBackpropagated,
}

pub type Result<T> = std::result::Result<T, TensorError>;
