use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Family parameters outside their admissible range.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// Evaluation point outside the domain of a function (e.g. `r <= 0`).
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// The principal eigenvalue of the operator plus potential is not positive.
    #[error("solvability hypothesis violated: principal eigenvalue {lambda_star:.6e} <= 0")]
    Solvability { lambda_star: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    /// A named structural condition on the problem data failed.
    #[error("validation failed [{condition}]: {detail}")]
    Validation { condition: String, detail: String },

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ParameterDomain(_) => "parameter_domain",
            Error::Domain(_) => "domain",
            Error::Usage(_) => "usage",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical { .. } => "numerical",
            Error::Solvability { .. } => "solvability",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::Validation { .. } => "validation",
            Error::InsufficientStatistics(_) => "insufficient_statistics",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
