use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: max |M_ij - M_ji| = {asymmetry:e} exceeds {tolerance:e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("symmetric eigensolver did not converge: {0}")]
    EigenNoConvergence(String),

    #[error("exact oracle supports n <= {max}, got n = {n}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("precondition ({which}) violated: {detail}")]
    PreconditionViolated { which: &'static str, detail: String },

    #[error("probability {p} outside admissible interval [{lo}, {hi}]")]
    PInterval { p: f64, lo: f64, hi: f64 },

    #[error("conic solve ended with status {status:?}")]
    Solver { status: SolveStatus },

    #[error("dual certificate failed verification: {0}")]
    Certificate(String),

    #[error("instance {index} failed ({source}); instance: {instance}")]
    InstanceFailed {
        index: usize,
        /// JSON of the failing input, enough to replay it.
        instance: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn precondition(which: &'static str, detail: impl Into<String>) -> Self {
        Error::PreconditionViolated { which, detail: detail.into() }
    }
}
