use thiserror::Error;

/// Errors surfaced by the geometry and operator layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sphere point ({0}, {1}, {2}) is not unit length")]
    NonUnitSphere(f64, f64, f64),
    #[error("point lies on (or within {tol:e} of) the removed fiber of the chart")]
    RemovedFiber { tol: f64 },
    #[error("chart transition has a pole at zeta = 0")]
    TransitionPole,
    #[error("basis index {index} out of range for basis of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("Gauss-Hermite order {order} cannot integrate polynomial symbol exactly (needs >= {needed})")]
    QuadratureOrderTooLow { order: usize, needed: usize },
    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),
    #[error("decay fit needs at least 3 positive residuals, got {0}")]
    FitUnderdetermined(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
