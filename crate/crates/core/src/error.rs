use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("layer {layer} is an AdaBN layer but no statistics were supplied")]
    MissingStats { layer: usize },

    #[error("layer {layer} takes no domain statistics")]
    UnexpectedStats { layer: usize },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("non-finite value {context}")]
    NonFinite { context: String },

    #[error("layer {layer}: entry {index} of the diagonal scale is zero")]
    Singular { layer: usize, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("AUROC needs both normal and anomalous samples")]
    SingleClass,

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("unsupported model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
