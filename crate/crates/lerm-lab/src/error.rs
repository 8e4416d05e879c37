use thiserror::Error;

/// Errors surfaced by the library and CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid probability batch: {0}")]
    InvalidProbBatch(String),

    #[error("cross-entropy undefined: diagonal prediction mean for class {class} is not positive")]
    ZeroDiagonalMean { class: usize },

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },

    #[error("zero predicted probability at the true class (row {row}, class {class})")]
    ZeroTrueClassProb { row: usize, class: usize },

    #[error("empty {0} set")]
    EmptySet(&'static str),

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("config error: {0}")]
    ConfigGeneral(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
