use thiserror::Error;

pub type Result<T, E = SspError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SspError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("dimensions must be positive, got {0}")]
    ZeroDimension(String),

    #[error("buffer length {found} does not match dimensions (expected {expected})")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("mask value {value} at flat index {index} is invalid for a {kind} mask")]
    InvalidMaskValue {
        index: usize,
        value: f32,
        kind: &'static str,
    },

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("prototype has zero norm{}", match .position {
        Some((h, w)) => format!(" at position ({h}, {w})"),
        None => String::new(),
    })]
    ZeroPrototype { position: Option<(usize, usize)> },

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("episode needs at least one support shot")]
    NoSupport,
}

impl SspError {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        SspError::DimMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
