use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown tag {tag:?} on line {line}")]
    UnknownTag { line: usize, tag: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("corpus is already unlabeled")]
    AlreadyUnlabeled,

    #[error("label scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("sentence {id}: {message}")]
    LengthMismatch { id: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {what} in {tensor}")]
    NonFinite { what: &'static str, tensor: String },

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("degenerate score distribution (all {value}); use keep_all instead of a threshold")]
    DegenerateScores { value: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
