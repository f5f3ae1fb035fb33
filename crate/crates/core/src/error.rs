use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole crate.
///
/// `Undefined` is deliberately separate from `InvalidInput`: rank metrics on
/// tiny validation splits legitimately have no comparable pairs, and callers
/// (tree-weight evaluation, in particular) need to distinguish "this metric
/// does not exist here" from "you passed garbage".
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A metric has no defined value on this data (e.g. zero comparable pairs).
    #[error("metric undefined: {0}")]
    Undefined(String),

    /// A censoring-survival weight denominator fell below 1e-12. Hard error by
    /// design: clamping would silently bias the metric; the caller must shrink
    /// the truncation time instead.
    #[error("degenerate IPCW weight: {0}")]
    DegenerateWeight(String),

    #[error("schema violation at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("codec error: {0}")]
    Codec(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for conditions under which a per-tree metric is treated as
    /// "undefined" rather than aborting the federation round.
    pub fn is_metric_undefined(&self) -> bool {
        matches!(self, Error::Undefined(_) | Error::DegenerateWeight(_))
    }
}
