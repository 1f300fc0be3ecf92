//! Inexact Newton iteration on `F(w) = 0`.
//!
//! The linear systems use the exact Jacobian as operator and a sparse LU of
//! the chosen approximate Jacobian as right preconditioner. The factorization
//! is computed at the first iteration and reused afterwards.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::krylov::{lgmres_solve, KrylovSettings};
use crate::lu::{build_preconditioner, PermutedLu};
use crate::residual::{JacobianMode, MfgProblem, SolverState};
use crate::sparse::{norm2, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub max_newton_iters: usize,
    pub residual_tol: f64,
    pub krylov: KrylovSettings,
    /// Matrix factored for the preconditioner.
    pub jacobian_mode: JacobianMode,
    /// Abort when the residual exceeds this multiple of the initial one.
    pub divergence_factor: f64,
    /// Refactor the preconditioner at every iteration instead of once.
    pub refactor_every_iteration: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_newton_iters: 1000,
            residual_tol: 6e-6,
            krylov: KrylovSettings::default(),
            jacobian_mode: JacobianMode::Decoupled,
            divergence_factor: 1e6,
            refactor_every_iteration: false,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(invalid(format!(
                "residual_tol {} must be positive",
                self.residual_tol
            )));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(invalid("divergence_factor must exceed 1"));
        }
        self.krylov.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Newton iterations taken.
    pub iterations: usize,
    /// Total inner Krylov iterations.
    pub krylov_iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub wall_time: f64,
    pub converged: bool,
    /// RMSE between the initial guess and the returned solution, when the
    /// guess came from a coarser rung.
    pub rmse_vs_reference: Option<f64>,
    /// `||F||` before each iteration and after the last.
    pub residual_history: Vec<f64>,
    /// Newton steps whose inner solve missed the Krylov tolerance.
    pub inexact_steps: usize,
}

pub fn newton_solve(
    initial_guess: SolverState,
    problem: &MfgProblem,
    settings: &NewtonSettings,
) -> Result<(SolverState, SolveReport)> {
    settings.validate()?;
    let start = Instant::now();
    let mut state = initial_guess;
    if !state.is_finite() {
        return Err(invalid("initial guess has non-finite entries"));
    }
    let mut f = problem.residual(&state)?;
    let r0 = norm2(&f);
    let mut rnorm = r0;
    let mut history = vec![r0];
    let mut iterations = 0;
    let mut krylov_iterations = 0;
    let mut inexact_steps = 0;
    let mut precond: Option<Box<dyn LinearOperator>> = None;

    while rnorm > settings.residual_tol && iterations < settings.max_newton_iters {
        if precond.is_none() || settings.refactor_every_iteration {
            let approx = problem.jacobian(&state, settings.jacobian_mode)?;
            precond = Some(match settings.jacobian_mode {
                JacobianMode::OneWay => Box::new(PermutedLu::factor(
                    &approx,
                    problem.layout().values_first_order(),
                )?),
                _ => Box::new(build_preconditioner(&approx)?),
            });
        }
        let jac = problem.jacobian(&state, JacobianMode::Exact)?;
        for v in f.iter_mut() {
            *v = -*v;
        }
        let out = lgmres_solve(&jac, &f, precond.as_deref().unwrap(), &settings.krylov)?;
        krylov_iterations += out.iterations;
        if !out.converged {
            inexact_steps += 1;
        }
        for (w, d) in state.w.iter_mut().zip(&out.x) {
            *w += d;
        }
        iterations += 1;
        f = match problem.residual(&state) {
            Ok(f) => f,
            Err(Error::NumericalOverflow { .. }) => {
                return Err(Error::Divergence {
                    iteration: iterations,
                    residual: f64::INFINITY,
                    state: Box::new(state),
                })
            }
            Err(e) => return Err(e),
        };
        rnorm = norm2(&f);
        history.push(rnorm);
        if rnorm > settings.divergence_factor * r0.max(settings.residual_tol) {
            return Err(Error::Divergence {
                iteration: iterations,
                residual: rnorm,
                state: Box::new(state),
            });
        }
    }

    let report = SolveReport {
        iterations,
        krylov_iterations,
        initial_residual: r0,
        final_residual: rnorm,
        wall_time: start.elapsed().as_secs_f64(),
        converged: rnorm <= settings.residual_tol,
        rmse_vs_reference: None,
        residual_history: history,
        inexact_steps,
    };
    Ok((state, report))
}
