//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes {found:?}, expected \"FEAT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("stream truncated: needed {needed} more bytes for {part}")]
    Truncated { part: &'static str, needed: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid header: {msg}")]
    InvalidHeader { msg: String },

    #[error("row {row} claims normalization but has norm {norm}")]
    NormFlagViolation { row: usize, norm: f64 },

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("manifest line {line}: duplicate item_id \"{item_id}\"")]
    DuplicateItemId { line: usize, item_id: String },

    #[error("tracklet {tracklet} spans cameras {first} and {second}")]
    TrackletCameraConflict { tracklet: i64, first: i64, second: i64 },

    #[error("shape mismatch in {context}: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("index {index} out of range (limit {limit}) in {context}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },

    #[error("no anchor in the batch has a positive; loss undefined")]
    NoPositivePairs,

    #[error("no anchor in the batch admits a valid triplet")]
    NoValidTriplet,

    #[error("backward cache does not match the given parameters")]
    StaleCache,

    #[error("non-finite loss at step {step}; training aborted")]
    NonFiniteLoss { step: usize },

    #[error("no query has a valid match under the evaluation protocol")]
    NoEvaluableQueries,

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("missing config key [{section}] {key}")]
    ConfigMissing { section: String, key: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
