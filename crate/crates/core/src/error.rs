use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { required: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate function: {0}")]
    DegenerateFunction(String),

    #[error("degenerate covariance: no eigenvalue above threshold {threshold:e}")]
    DegenerateCovariance { threshold: f64 },

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    #[error("Gauss-Newton did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("bootstrap replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} Monte Carlo replications failed (limit is 1%): first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot parse row {row}, column `{column}`: {value:?}")]
    Parse { row: usize, column: String, value: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input or configuration problems, as opposed to failures inside a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::TooFewObservations { .. }
                | Error::InvalidParameter(_)
                | Error::DegenerateFunction(_)
                | Error::MissingColumn(_)
                | Error::DuplicateColumn(_)
                | Error::Empty(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
