use thiserror::Error;

/// Errors raised by model construction, inference and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model field `{field}`: {reason}")]
    InvalidModel { field: String, reason: String },

    #[error("policy has zero utility; no reward-weighted distribution exists (try a randomized initial policy)")]
    ZeroUtility,

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:.3e}{})",
        .period.map(|p| format!(", oscillation with period {p} detected")).unwrap_or_default())]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last_change: f64,
        period: Option<usize>,
    },

    #[error("brute-force enumeration of {size:.3e} weighted trajectories exceeds the cap of {cap:.3e}")]
    EnumerationTooLarge { size: f64, cap: f64 },

    #[error("component t={t} has zero reward mass")]
    DegenerateComponent { t: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
