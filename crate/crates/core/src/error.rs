use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("volume is constant; cannot normalize")]
    ConstantVolume,
    #[error("bad magic bytes in tensor file")]
    BadMagic,
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u8),
    #[error("shape not representable in tensor file format: {0}")]
    ShapeOverflow(String),
    #[error("tensor file truncated")]
    TruncatedFile,
    #[error("trailing bytes after tensor payload")]
    TrailingData,
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("sequence depth must be at least 1")]
    InvalidDepth,
    #[error("input unsupported by extractor: {0}")]
    ShapeUnsupported(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("class missing from dataset: {0}")]
    MissingClass(String),
    #[error("90/270 degree rotation requires square spatial dims, got {h}x{w}")]
    NonSquareRotation { h: usize, w: usize },
    #[error("scores must contain at least one positive and one negative label")]
    DegenerateLabels,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
