use std::io;

use thiserror::Error;

/// Errors raised by the association pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: pixel ({u}, {v}) outside {width}x{height} sensor")]
    OutOfBounds {
        line: usize,
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },

    #[error("line {line}: timestamp regression ({t} < {prev})")]
    TimestampRegression { line: usize, t: f64, prev: f64 },

    #[error("event at t={t} precedes frame update time {last}")]
    EventPrecedesFrame { t: f64, last: f64 },

    #[error("need at least {needed} calibration samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("every representative hypothesis was dropped as noise")]
    EmptyModel,

    #[error("no hypothesis can be formed: {0}")]
    NoHypotheses(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("tracking failure: {0}")]
    TrackingFailure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no tracking pairs to evaluate")]
    NoPairs,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
