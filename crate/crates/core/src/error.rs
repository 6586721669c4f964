use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline, model and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty series")]
    EmptySeries,

    #[error("series {asset} has {count} gap(s); first at timestamp {first}")]
    Gaps {
        asset: String,
        count: usize,
        first: i64,
    },

    #[error("degenerate volume: training segment maximum is zero")]
    DegenerateVolume,

    #[error("series too short: {have} bars, need at least {need} ({detail})")]
    TooShort {
        have: usize,
        need: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero total volume")]
    ZeroVolume,

    #[error("zero market VWAP")]
    ZeroVwap,

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("baseline mean loss is zero")]
    ZeroBaseline,

    #[error("missing sub-allocator for bin duration {0} s")]
    MissingSubAllocator(u64),

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("config error(s): {}", .0.join("; "))]
    Config(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
