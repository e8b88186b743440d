use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the matching toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("zero margin for {side} group {index}")]
    ZeroMargin { side: Side, index: usize },

    #[error("choice probabilities sum to {sum} > 1")]
    InfeasibleProbabilities { sum: f64 },

    #[error("matching is on the support boundary at cells {cells:?}")]
    Boundary { cells: Vec<(isize, isize)> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("linear programming backend failed: {0}")]
    Lp(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("{file}: line {line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("bootstrap aborted: {failed} of {total} replications failed")]
    Bootstrap { failed: usize, total: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Side of the market.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Men,
    Women,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Men => f.write_str("men"),
            Side::Women => f.write_str("women"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dims(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }

    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NoConvergence { .. })
    }
}
