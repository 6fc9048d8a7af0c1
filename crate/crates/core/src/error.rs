use qecbench_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QecError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QecError>;

pub(crate) fn invalid(msg: impl Into<String>) -> QecError {
    QecError::InvalidParameter(msg.into())
}
