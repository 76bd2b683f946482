use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::embedding::NetworkId;

/// Coarse failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical procedure could not produce a result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum DmadError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("bad magic: expected EMB1, found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported EMB1 version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream: declared {declared} values, read {read}")]
    Truncated { declared: usize, read: usize },
    #[error("trailing bytes after {declared} values")]
    TrailingBytes { declared: usize },
    #[error("degenerate variance: vector is constant")]
    DegenerateVariance,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("antipodal, interpolation undefined")]
    Antipodal,
    #[error("single-class data: {0}")]
    SingleClass(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("duplicate sample_id {0:?}")]
    DuplicateSampleId(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing embedding for sample {sample_id:?} under {network}")]
    MissingEmbedding { sample_id: String, network: NetworkId },
    #[error("manifest does not cover referenced cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("unknown sample_id {0:?}")]
    UnknownSample(String),
    #[error("group mismatch: {0}")]
    GroupMismatch(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<DmadError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DmadError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            DmadError::DegenerateVariance
            | DmadError::ZeroNorm
            | DmadError::Antipodal => ErrorKind::Numeric,
            DmadError::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        DmadError::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = DmadError> = std::result::Result<T, E>;
