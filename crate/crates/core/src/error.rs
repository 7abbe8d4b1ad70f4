use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("sample counts differ: {left} vs {right}")]
    UnequalSampleCount { left: usize, right: usize },

    #[error("exact assignment refused: {n} samples exceeds cap {cap}")]
    AssignmentCap { n: usize, cap: usize },

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("{which} lost positive definiteness at t = {t} (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite {
        which: &'static str,
        t: f64,
        min_eig: f64,
    },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical machinery itself (as opposed to
    /// bad input). The runner maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::AssignmentCap { .. }
        )
    }
}
