use std::path::PathBuf;

use ssp_core::SspError;
use thiserror::Error;

/// Why a byte buffer is not a valid SSPT tensor.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic {0:02x?}, expected \"SSPT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("unknown tensor kind {0}")]
    BadKind(u8),
    #[error("zero dimension in header")]
    ZeroDimension,
    #[error("dimensions {0:?} overflow the addressable size")]
    DimOverflow(Vec<u32>),
    #[error("truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: u64 },
    #[error("mask value {value} at byte offset {offset} is out of range")]
    InvalidMaskValue { offset: u64, value: f32 },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Pipeline(#[from] SspError),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{name} = {value} is outside {range}")]
    InvalidRatio {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("episode {episode_id}: {message}")]
    InvalidEpisode { episode_id: u64, message: String },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
