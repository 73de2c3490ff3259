use alloc::string::String;

/// Errors raised by model construction, fitting and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("row {row} is the zero vector, its direction is undefined")]
    ZeroRow { row: usize },
    #[error("expected a unit vector, got norm {norm}")]
    NotUnit { norm: f64 },
    #[error("tangent vector is not orthogonal to the mean direction (dot = {dot})")]
    NotOrthogonal { dot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("every kernel centre was excluded")]
    AllExcluded,
    #[error("loss is not finite at the initial parameters")]
    InfiniteInitialLoss,
    #[error("no observations exceed the threshold")]
    NoExceedances,
    #[error("radius {radius} is not above the threshold {threshold}")]
    BelowThreshold { radius: f64, threshold: f64 },
    #[error("column `{column}` has zero variance")]
    ZeroVariance { column: String },
    #[error("row {row}: period must be positive, got {value}")]
    NonPositivePeriod { row: usize, value: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
