use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum NrkgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate row {row}: norm {norm:e} is below the normalization threshold")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unknown id: {0}")]
    Lookup(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("unknown semantic tokens: {}", .0.join(", "))]
    Vocabulary(Vec<String>),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint load error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible synthetic spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NrkgError>;

impl NrkgError {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        NrkgError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
