use clipsight_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{op}: bad input: {reason}")]
    BadInput { op: &'static str, reason: String },

    #[error("{op}: {path}: {reason}")]
    Io {
        op: &'static str,
        path: String,
        reason: String,
    },
}

impl ModelError {
    pub fn bad_input(op: &'static str, reason: impl Into<String>) -> Self {
        ModelError::BadInput {
            op,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
