use thiserror::Error;

/// Errors produced by model construction, fitting and testing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("coding error for '{variable}': {message}")]
    Coding { variable: String, message: String },

    /// Condition for valid level probabilities: every declared level must be
    /// observed at least once.
    #[error("level '{level}' of '{variable}' has no observations")]
    DegenerateLevel { variable: String, level: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate design for '{0}': a level is unobserved or polynomial powers are collinear")]
    DegenerateDesign(String),

    #[error(
        "local smoother system is numerically singular at z = {at}; widen the bandwidth (h = {bandwidth})"
    )]
    BandwidthTooSmall { at: f64, bandwidth: f64 },

    #[error("unconstrained residual sum of squares is zero: perfect fit, the statistic is undefined")]
    PerfectFit,

    #[error("series truncation failed after {terms} terms (remaining bound {bound:e})")]
    SeriesTruncation { terms: usize, bound: f64 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error stems from user-provided input (data, schema,
    /// hypothesis or configuration files) rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Coding { .. }
                | Error::DegenerateLevel { .. }
                | Error::Argument(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
