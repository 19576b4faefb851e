use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix is not invertible")]
    NotInvertible,

    #[error("linear system is inconsistent")]
    Inconsistent,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resource guard: {what} needs about {bytes} bytes; refusing (limit {limit} bytes)")]
    ResourceGuard {
        what: String,
        bytes: u128,
        limit: u128,
    },

    #[error("unsupported ambient dimension {0} for sphere quadrature (supported: 2..=4)")]
    UnsupportedSphereDim(usize),

    #[error("unsupported push-forward: {0}")]
    UnsupportedPushForward(String),

    #[error("invalid multi-index: {0}")]
    BadMultiIndex(String),

    #[error("operator does not meet the rank condition: {0}")]
    RankCondition(String),

    #[error("witness failed verification: {0}")]
    WitnessRejected(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("covering failed: reached fraction {achieved} of the target 1-eps coverage")]
    CoveringFailed { achieved: f64 },
}
