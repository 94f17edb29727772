use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("duplicate track id `{0}`")]
    DuplicateTrack(String),

    #[error("unknown track id `{0}`")]
    UnknownTrack(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("action {action} out of range for pool of {pool}")]
    InvalidAction { action: usize, pool: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
