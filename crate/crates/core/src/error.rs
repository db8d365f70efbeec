use thiserror::Error;

use crate::types::ApId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid config at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("window underfull: {have} packets, need {need}")]
    WindowUnderfull { have: usize, need: usize },

    #[error("records from more than one access point in a single window ({0} and {1})")]
    MixedAps(ApId, ApId),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("steering matrix is ill-conditioned (condition number {cond:.3e})")]
    DegenerateGeometry { cond: f64 },

    #[error("path {path} weight vanished (|w| = {magnitude:.3e})")]
    WeakPath { path: usize, magnitude: f64 },

    #[error("need at least 2 paths for offset-free phases, have {0}")]
    InsufficientPaths(usize),

    #[error("displacement unobservable: {rows} rows, condition number {cond:.3e}")]
    UnobservableDisplacement { rows: usize, cond: f64 },

    #[error("stream order violated: packet {got} after {last}")]
    StreamOrder { last: u64, got: u64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unsupported trace version `{0}`")]
    Version(String),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
