use std::io;

use crate::repr::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reading or writing the binary formats (feature stores, grid
/// files, checkpoints). Each variant maps to a stable code string.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated store")]
    Truncated,
    #[error("corrupt record {record}: {reason}")]
    Corrupt { record: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "E_BAD_MAGIC",
            FormatError::UnsupportedVersion(_) => "E_VERSION",
            FormatError::Truncated => "E_TRUNCATED",
            FormatError::Corrupt { .. } => "E_CORRUPT",
            FormatError::Io(_) => "E_IO",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no modality")]
    NoModality,
    #[error("duplicate modality {0}")]
    DuplicateModality(Modality),
    #[error("feature for modality {0} not in the requested modality set")]
    UnexpectedModality(Modality),
    #[error("missing feature for modality {0}")]
    MissingModality(Modality),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate feature")]
    DegenerateFeature,
    #[error("representation is not normalized")]
    NotNormalized,
    #[error("degenerate anchor {0}: needs at least one positive and one negative")]
    DegenerateAnchor(usize),
    #[error("every anchor in the batch is degenerate")]
    DegenerateBatch,
    #[error("identity {identity} out of range for {classes} classes")]
    IdentityOutOfRange { identity: usize, classes: usize },
    #[error("invalid scenario {0:?}: expected e.g. \"RT-to-NT\" using letters R, N, T")]
    InvalidScenario(String),
    #[error("no valid queries: every query lacks a positive in the gallery")]
    NoValidQueries,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient key mismatch: {0}")]
    GradientKeys(String),
    #[error("diverged: non-finite gradient in {0}")]
    Diverged(String),
    #[error("unknown sample id {0}")]
    UnknownId(usize),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Format(FormatError::Io(e))
    }
}
