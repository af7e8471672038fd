//! Error types shared across the pipeline.

use crate::data::RecordKey;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // manifest / cache IO
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("malformed manifest row at line {0}: {1}")]
    MalformedRow(usize, String),
    #[error("duplicate record key {0:?}")]
    DuplicateKey(RecordKey),
    #[error("non-positive identifier at line {0}")]
    NonPositiveId(usize),
    #[error("bad magic bytes in feature cache")]
    BadMagic,
    #[error("feature cache truncated")]
    TruncatedFile,
    #[error("unsupported feature cache version {0}")]
    VersionUnsupported(u32),
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    // features
    #[error("empty image")]
    EmptyImage,
    #[error("channel value outside [0,1]")]
    OutOfRangeChannel,
    #[error("MB-LBP block side must be odd, got {0}")]
    EvenBlockSide(usize),
    #[error("image must be {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    WrongImageSize {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    // reduce
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("PCA output dimension {out_dim} exceeds limit {limit}")]
    OutDimTooLarge { out_dim: usize, limit: usize },

    // metrics
    #[error("no positive pairs available")]
    NoPositivePairs,
    #[error("no negative pairs available")]
    NoNegativePairs,
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("RRDA needs at least 2 classes")]
    SingleClass,
    #[error("ridge parameter must be positive")]
    NonPositiveLambda,

    // protocol
    #[error("dataset has no training-session records")]
    NoTrainingData,
    #[error("dataset has no test-session records")]
    NoTestData,
    #[error("gallery for camera {0} is empty")]
    EmptyGallery(u32),

    // eval
    #[error("record {0:?} has no features")]
    MissingFeatures(RecordKey),
    #[error("genuine probe set is empty")]
    EmptyGenuineProbeSet,
    #[error("impostor probe set is empty")]
    EmptyImpostorProbeSet,
    #[error("no outcomes to aggregate")]
    NoOutcomes,

    // synth / cli
    #[error("degenerate synthetic config: {0}")]
    DegenerateConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing results in {0}")]
    MissingResults(String),
    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
