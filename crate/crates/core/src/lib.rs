//! Nash mean-field game equilibria for one- and two-class traffic on a ring
//! road, solved by Newton-Krylov on the fully discretized forward-backward
//! system, with a microscopic epsilon-Nash check of the result.

pub mod continuation;
pub mod cost;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod lu;
pub mod micro;
pub mod newton;
pub mod residual;
pub mod scenario;
pub mod sparse;

pub use continuation::{
    prolong, restrict, rmse, run_schedule, ContinuationOutcome, ContinuationSchedule, InterpKind,
    Interpolation, Rung, RungReport,
};
pub use cost::{ClassParams, CostKind, CostModel, Family};
pub use error::{Error, Result};
pub use grid::{Grid, StepRule};
pub use krylov::{lgmres_solve, KrylovSettings};
pub use lu::{build_preconditioner, PermutedLu, SparseLu};
pub use micro::{BestResponseSettings, KdeSettings, MicroEnsemble};
pub use newton::{newton_solve, NewtonSettings, SolveReport};
pub use residual::{Field, JacobianMode, MfgProblem, SolverState, UnknownLayout};
pub use scenario::{build_scenario, Scenario, ScenarioName};
pub use sparse::{CsrMatrix, LinearOperator};
