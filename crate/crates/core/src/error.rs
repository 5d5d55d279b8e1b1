use std::path::PathBuf;

use thiserror::Error;

use crate::qp::QpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("joint {joint} angle {angle} outside limits [{lower}, {upper}]")]
    OutOfRange {
        joint: usize,
        angle: f64,
        lower: f64,
        upper: f64,
    },

    #[error(
        "joint {joint} angle {angle} is within the finite-difference step {step} of its limits"
    )]
    NearLimit { joint: usize, angle: f64, step: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("motion direction has zero norm")]
    ZeroDirection,

    #[error("malformed quadratic program: {0}")]
    MalformedQp(String),

    #[error("quadratic program did not converge (status {status:?}, KKT residual {residual:e})")]
    QpFailed { status: QpStatus, residual: f64 },

    #[error("simulation step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "posture unholdable: no tension distribution holds theta_start with all muscles active"
    )]
    PostureUnholdable,

    #[error("mask has {actual} entries but the model has {expected} muscles")]
    MaskLength { expected: usize, actual: usize },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
