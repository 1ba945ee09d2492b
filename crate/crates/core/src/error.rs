//! Error type shared by every simulator module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("distance ordering violated: d_k = {d_k:e} m exceeds d_K = {d_far:e} m")]
    Ordering { d_k: f64, d_far: f64 },

    #[error("sequence generation failed: {0}")]
    Generation(String),

    #[error("index {index} out of range (family size {size})")]
    Range { index: usize, size: usize },

    #[error("{requested} NMs requested but only {available} codes available")]
    Capacity { requested: usize, available: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank deficient matrix: rank {rank} < {expected} ({context})")]
    RankDeficient {
        rank: usize,
        expected: usize,
        context: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation failed: {}", format_issues(.0))]
    Validation(Vec<FieldIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One failed config check, located by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct FieldIssue {
    pub path: String,
    pub reason: String,
}

fn format_issues(issues: &[FieldIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("`{}`: {}", i.path, i.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
