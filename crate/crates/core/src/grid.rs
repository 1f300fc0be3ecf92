//! Uniform space-time mesh on the ring road.
//!
//! Cell `k` (0-based) covers `[k dx, (k+1) dx]`. Densities and speeds are cell
//! averages located at the cell centre; the value function is nodal and sits
//! on the right edge `(k+1) dx` of its cell, so node `nx - 1` is identified
//! with `x = 0` by periodicity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Time-step rules for the explicit stencils used by the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    /// Courant factor `c` in `(0, 1]`.
    pub cfl_factor: f64,
    /// Diffusive factor `beta` in `(0, 1/2]`.
    pub viscous_factor: f64,
    /// Artificial viscosity `nu` in `[0, 0.05]`.
    pub viscosity: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            cfl_factor: 1.0,
            viscous_factor: 0.5,
            viscosity: 0.0,
        }
    }
}

pub const MAX_VISCOSITY: f64 = 0.05;

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(invalid(format!(
                "cfl factor {} outside (0, 1]",
                self.cfl_factor
            )));
        }
        if !(self.viscous_factor > 0.0 && self.viscous_factor <= 0.5) {
            return Err(invalid(format!(
                "viscous factor {} outside (0, 1/2]",
                self.viscous_factor
            )));
        }
        check_viscosity(self.viscosity)
    }
}

pub fn check_viscosity(nu: f64) -> Result<()> {
    if !(0.0..=MAX_VISCOSITY).contains(&nu) {
        return Err(invalid(format!(
            "viscosity {nu} outside [0, {MAX_VISCOSITY}]"
        )));
    }
    Ok(())
}

/// Largest stable Lax-Friedrichs step: `c dx / max(speeds)`.
pub fn cfl_dt(dx: f64, max_speeds: &[f64], cfl_factor: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(invalid(format!("dx must be positive, got {dx}")));
    }
    if max_speeds.is_empty() {
        return Err(invalid("empty speed list"));
    }
    if let Some(bad) = max_speeds.iter().find(|s| !(**s > 0.0)) {
        return Err(invalid(format!("nonpositive speed {bad}")));
    }
    if !(cfl_factor > 0.0 && cfl_factor <= 1.0) {
        return Err(invalid(format!("cfl factor {cfl_factor} outside (0, 1]")));
    }
    let vmax = max_speeds.iter().copied().fold(f64::MIN, f64::max);
    Ok(cfl_factor * dx / vmax)
}

/// Largest stable step for the explicit viscosity term: `beta dx^2 / nu`.
pub fn viscous_dt(dx: f64, nu: f64, beta: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(invalid(format!("dx must be positive, got {dx}")));
    }
    if !(nu > 0.0) {
        return Err(invalid(format!(
            "viscous step needs nu > 0 (got {nu}); use the CFL step alone"
        )));
    }
    if !(beta > 0.0 && beta <= 0.5) {
        return Err(invalid(format!("viscous factor {beta} outside (0, 1/2]")));
    }
    Ok(beta * dx * dx / nu)
}

/// `k mod nx`, always in `[0, nx)`.
#[inline]
pub fn wrap_index(k: isize, nx: usize) -> usize {
    debug_assert!(nx >= 1);
    k.rem_euclid(nx as isize) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub road_length: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(road_length: f64, horizon: f64, nx: usize, nt: usize) -> Result<Self> {
        if !(road_length > 0.0 && road_length.is_finite()) {
            return Err(invalid(format!(
                "road length {road_length} must be positive"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon {horizon} must be positive")));
        }
        if nx < 3 {
            return Err(invalid(format!("nx = {nx}; need at least 3 cells")));
        }
        if nt < 1 {
            return Err(invalid("nt must be at least 1"));
        }
        Ok(Self {
            road_length,
            horizon,
            nx,
            nt,
            dx: road_length / nx as f64,
            dt: horizon / nt as f64,
        })
    }

    /// Builds the grid with `nt` chosen from the step rules: the smaller of
    /// the CFL and (when `nu > 0`) viscous steps, rounded so that `nt` is an
    /// integer and `dt = T / nt`.
    pub fn from_step_rule(
        road_length: f64,
        horizon: f64,
        nx: usize,
        max_speeds: &[f64],
        rule: &StepRule,
    ) -> Result<Self> {
        rule.validate()?;
        let probe = Self::new(road_length, horizon, nx, 1)?;
        let mut dt = cfl_dt(probe.dx, max_speeds, rule.cfl_factor)?;
        if rule.viscosity > 0.0 {
            dt = dt.min(viscous_dt(probe.dx, rule.viscosity, rule.viscous_factor)?);
        }
        // Guard against T/dt landing a hair above an integer.
        let nt = ((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(road_length, horizon, nx, nt)
    }

    #[inline]
    pub fn cell_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx
    }

    /// Position of value-function node `k`.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        (k as f64 + 1.0) * self.dx
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Courant number `dt * vmax / dx`.
    pub fn courant(&self, vmax: f64) -> f64 {
        self.dt * vmax / self.dx
    }
}
