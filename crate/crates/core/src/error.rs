use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} out of range for action space of size {count}")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("step called on a terminated episode; call reset first")]
    SteppedTerminalEnv,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    BufferTooSmall { have: usize, need: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("requested {requested} items but only {available} exist")]
    TooManyRequested { requested: usize, available: usize },
    #[error("target fruit {0} is neither on the grid nor in the basket")]
    TargetFruitMissing(u8),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("{0:?} is not derivable from the stacking grammar")]
    NotDerivable(String),
    #[error("board of width {width} cannot hold the pieces of {task}")]
    BoardTooSmall { width: usize, task: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("exploration action set is empty")]
    EmptyExploreSet,
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
