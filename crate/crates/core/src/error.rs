use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NvcError {
    #[error("invalid config: `{field}` {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("sweep needs at least one scale")]
    EmptyScales,

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("truncated file: need {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("odd dimensions {width}x{height}: 4:2:0 needs even width and height")]
    OddDimensions { width: usize, height: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("alignment mismatch: {0}")]
    AlignmentMismatch(String),

    #[error("symbol {symbol} outside table range [{min}, {max}]")]
    SymbolOutOfRange { symbol: i32, min: i32, max: i32 },

    #[error("malformed stream: {0}")]
    MalformedStream(String),

    #[error("cdf table needs a non-empty symbol range")]
    EmptyRange,

    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u8, found: u8 },

    #[error("unknown chunk id {0}")]
    UnknownChunk(u8),

    #[error("index out of range: {0}")]
    InvalidIndex(String),

    #[error("invalid loss kind: {0}")]
    InvalidKind(String),

    #[error("nan loss in stage {stage} at step {step}")]
    NanLoss { stage: usize, step: usize },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("rd curves do not overlap in quality")]
    NoOverlap,

    #[error("degenerate rd curve: {0}")]
    DegenerateCurve(String),

    #[error("channel report over zero total bits")]
    ZeroTotalBits,

    #[error("coder backend version {found} does not match format version {expected}")]
    BackendVersion { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[cfg(feature = "nn")]
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[cfg(feature = "nn")]
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NvcError>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> NvcError {
    NvcError::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}
