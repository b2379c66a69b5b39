use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("barrier center is not in the interior of set `{label}`")]
    CenterNotInterior { label: String },

    #[error("point is outside the strict barrier region (margin {margin} < kappa {kappa})")]
    OutsideStrictRegion { margin: f64, kappa: f64 },

    #[error("invalid parameter: {0}")]
    ParameterInvalid(String),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("invalid constraint schedule: {0}")]
    InvalidSchedule(String),

    #[error("shrunk set `{label}` is empty (center violates it at radius {radius})")]
    EmptyShrunkSet { label: String, radius: f64 },

    #[error("rollout length mismatch: expected {expected}, found {found}")]
    RolloutLengthMismatch { expected: usize, found: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("critic gradient unavailable at the successor state")]
    CriticGradientUnavailable,

    #[error("initial critic precondition cannot be met: {0}")]
    PreconditionFailed(String),

    #[error("no safe policy found at k = {k} after {attempts} rejected candidates")]
    NoSafePolicyFound { k: usize, attempts: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("grid too coarse: greedy policy cycles between cells {a:?} and {b:?}")]
    GridTooCoarse {
        a: (usize, usize),
        b: (usize, usize),
    },

    #[error("Riccati iteration diverged (norm {norm:e} after {iters} iterations)")]
    Divergence { norm: f64, iters: usize },
}
