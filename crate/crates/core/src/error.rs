use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} at flat index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("class probabilities at pixel {pixel} sum to {sum}, expected 1")]
    SimplexViolation { pixel: usize, sum: f64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("hard label has non-binary value {value} at flat index {index}")]
    HardnessViolation { index: usize, value: f64 },
    #[error("dims {dims:?} hold {expected} elements but data has {found}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("bad dims {0:?}")]
    BadDims(Vec<usize>),

    #[error("bad magic bytes {0:?}, expected \"SDT1\"")]
    BadMagic([u8; 4]),
    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("tensor file has {0} trailing bytes")]
    TrailingData(usize),
    #[error("declared dims overflow the addressable element count")]
    DimOverflow,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("soft tversky loss requires hard labels (pass the soft-label override to force it)")]
    SoftLabelIncompatible,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown loss identifier {0:?}")]
    UnknownLoss(String),

    #[error("rater stack is empty")]
    EmptyStack,
    #[error("label smoothing epsilon {0} outside [0, 1)")]
    BadEpsilon(f64),
    #[error("every rater has zero Dice against the majority vote")]
    AllZeroWeights,

    #[error("expected hard labels, found soft value {value} at flat index {index}")]
    SoftInput { index: usize, value: f64 },
    #[error("no calibration records")]
    EmptyRecords,

    #[error("empty batch")]
    EmptyBatch,
    #[error("kernel weights underflowed for every key point")]
    DegenerateWeights,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{images} images cannot be split into {folds} folds")]
    TooFewImages { images: usize, folds: usize },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
