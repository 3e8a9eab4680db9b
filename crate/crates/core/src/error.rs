use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the synthesis engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: PNG decode failed: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: unsupported PNG {property}: {value}")]
    UnsupportedPng {
        path: PathBuf,
        property: &'static str,
        value: String,
    },

    #[error("{path}: PNG encode failed: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image {width}x{height} too small for patch radius {radius} (needs at least {needed} per side)")]
    ImageTooSmall {
        width: usize,
        height: usize,
        radius: usize,
        needed: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated at byte {0}")]
    Truncated(usize),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("non-finite value at float offset {0}")]
    NonFinite(usize),

    #[error("field has no level structure; pass explicit sub-block bounds")]
    MissingLevelStructure,

    #[error("duplicate exemplar id {0}")]
    DuplicateId(u32),

    #[error("empty exemplar database")]
    EmptyDatabase,

    #[error("empty exemplar selection")]
    EmptySelection,

    #[error("descriptor config mismatch: query {query}, database {database}")]
    ConfigMismatch { query: String, database: String },

    #[error("oracle selection requires ground truth")]
    MissingGroundTruth,

    #[error("no positive labels")]
    NoPositives,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
