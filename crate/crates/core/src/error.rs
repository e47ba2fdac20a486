use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("complete or quasi-complete separation detected (coefficient norm {norm:.3e})")]
    Separation { norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("infeasible design: {reason}")]
    Infeasible { reason: String },

    #[error("study aborted: {failed} of {total} replications failed (first failure: {first_reason})")]
    StudyAborted { failed: usize, total: usize, first_reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
