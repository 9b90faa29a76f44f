use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid genotype at `{path}`: {message}")]
    Genotype { path: String, message: String },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("search space too large: {count} genotypes exceeds cap {cap}")]
    SpaceTooLarge { count: u128, cap: u128 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FusionError {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        FusionError::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FusionError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;
