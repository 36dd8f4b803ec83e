use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{0}")]
    Contract(String),

    #[error("x = {x} lies outside the spline domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("spline degree {0} is not supported for this operation")]
    UnsupportedDegree(usize),

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("input sequence is empty")]
    EmptySequence,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("degenerate feature `{0}`: max equals min on the training partition")]
    DegenerateFeature(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("checkpoint tensor `{tensor}`: {msg}")]
    Checkpoint { tensor: String, msg: String },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("unknown profile `{0}` (valid: groupA, groupB, groupC)")]
    UnknownProfile(String),

    #[error("model scalers have not been fitted")]
    UnfittedScaler,

    #[error("metric: {0}")]
    Metric(String),

    #[error("training controller already emitted stop")]
    ControllerStopped,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
