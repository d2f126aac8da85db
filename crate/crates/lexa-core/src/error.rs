use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} is undefined for input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f32),
    #[error("replay buffer is empty")]
    EmptyReplay,
    #[error("environment mismatch: expected {expected}, found {found}")]
    EnvMismatch { expected: String, found: String },
    #[error("unknown goal id `{0}`")]
    UnknownGoal(String),
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("{0}")]
    Invalid(String),
}
