use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tensor(#[from] clipsight_tensor::TensorError),

    #[error(transparent)]
    Stats(#[from] clipsight_stats::StatsError),

    #[error(transparent)]
    Model(#[from] clipsight_models::ModelError),

    #[error("{0}")]
    Invalid(String),

    /// A command needs an artifact that an earlier step was supposed to
    /// produce; `step` names the command to run first.
    #[error("missing artifact {path}: run `{step}` first")]
    MissingArtifact { step: &'static str, path: PathBuf },
}

impl PipelineError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PipelineError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
