use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate observation for site {site} at {year}/{day}")]
    Conflict { site: String, year: i32, day: u32 },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e}, last iterate {last:?})")]
    NonConvergence {
        iterations: usize,
        last: Vec<f64>,
        grad_norm: f64,
    },

    #[error("quantile crossing at time {time}, site {site}, tau {tau}")]
    CrossingQuantiles { time: String, site: String, tau: f64 },

    #[error("marginal endpoint exceeded at {} observed entries (first: {:?})", .entries.len(), .entries.first())]
    EndpointViolation { entries: Vec<(usize, usize)> },

    #[error("design matrix is collinear (condition number {condition:.3e})")]
    Collinear { condition: f64 },

    #[error("covariance matrix is not positive definite after jitter (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("level for probability {prob:.3e} falls below the threshold; use body quantiles")]
    BelowThreshold { prob: f64 },

    #[error("stage `{stage}` requires stage {requires}")]
    MissingArtifact { stage: String, requires: String },

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
