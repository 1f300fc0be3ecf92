use thiserror::Error;

use crate::residual::SolverState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A residual block produced a non-finite value.
    #[error("numerical overflow in {block} rows (class {class}, time level {level}, cell {cell})")]
    NumericalOverflow {
        block: &'static str,
        class: usize,
        level: usize,
        cell: usize,
    },

    #[error("singular preconditioner: pivot {pivot:.3e} at elimination step {step}")]
    SingularPreconditioner { step: usize, pivot: f64 },

    /// Newton residual grew past the divergence guard. The last iterate is
    /// attached so callers can inspect or dump it.
    #[error("Newton iteration diverged at iteration {iteration}: residual {residual:.3e}")]
    Divergence {
        iteration: usize,
        residual: f64,
        state: Box<SolverState>,
    },

    #[error("continuation aborted at rung {rung}: {source}")]
    RungFailed {
        rung: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("vehicle {vehicle} (class {class}) produced a non-finite speed at step {step}")]
    Propagation {
        class: usize,
        vehicle: usize,
        step: usize,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
