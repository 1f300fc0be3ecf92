//! Macro-to-micro validation: sampled vehicles follow the equilibrium speed
//! field, and each vehicle's best unilateral deviation measures how far the
//! constructed controls are from a Nash equilibrium of the finite game.
//!
//! All quantities here live on the microscopic road (`L_j = n`), built with
//! [`Scenario::rescaled`](crate::scenario::Scenario::rescaled). Densities
//! seen by a vehicle are `M_m * KDE_m(x)`, where `M_m` is the class mass of
//! the rescaled initial density, so they share units with `rho_jam`.

mod game;
pub mod kde;
mod report;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::continuation::InterpKind;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::residual::SolverState;
use crate::scenario::Scenario;

pub use game::{
    best_response, cost_gradient, run_best_responses, vehicle_cost, BestResponse,
    BestResponseSettings, RunningCost,
};
pub use kde::{kde_density, kde_gradient};
pub use report::{epsilon_report, fit_slopes, AccuracyReport};
pub use sampling::sample_initial_positions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeSettings {
    /// `sigma_j = bandwidth_factor * N_j`.
    pub bandwidth_factor: f64,
}

impl Default for KdeSettings {
    fn default() -> Self {
        Self {
            bandwidth_factor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroEnsemble {
    /// Vehicles per section, `n`.
    pub scale: usize,
    pub road_length: f64,
    pub dt: f64,
    pub nt: usize,
    pub n_per_class: Vec<usize>,
    /// Microscopic free-flow speeds.
    pub u_max: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Class masses `M_m` scaling the normalized KDE.
    pub mass: Vec<f64>,
    /// `snapshots[n][m]`: positions of class `m` at step `n`, `nt + 1` steps.
    pub snapshots: Vec<Vec<Vec<f64>>>,
    /// `v_hat[j][i][n]`, `nt` entries per vehicle.
    pub v_hat: Vec<Vec<Vec<f64>>>,
    pub v_bar: Vec<Vec<Vec<f64>>>,
    pub j_hat: Vec<Vec<f64>>,
    pub j_bar: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
}

impl MicroEnsemble {
    pub fn n_classes(&self) -> usize {
        self.n_per_class.len()
    }

    pub fn total_vehicles(&self) -> usize {
        self.n_per_class.iter().sum()
    }

    /// Positions of vehicle `i` of class `j` at every step.
    pub fn trajectory(&self, j: usize, i: usize) -> Vec<f64> {
        self.snapshots.iter().map(|s| s[j][i]).collect()
    }

    pub fn has_best_responses(&self) -> bool {
        !self.v_bar.is_empty()
    }

    /// `||v_hat - v_bar||_inf / u_max` per vehicle.
    pub fn speed_gaps(&self) -> Vec<Vec<f64>> {
        self.v_hat
            .iter()
            .zip(&self.v_bar)
            .enumerate()
            .map(|(j, (h, b))| {
                h.iter()
                    .zip(b)
                    .map(|(vh, vb)| {
                        vh.iter()
                            .zip(vb)
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0, f64::max)
                            / self.u_max[j]
                    })
                    .collect()
            })
            .collect()
    }
}

/// Periodic interpolation of a cell-centred macro field at position `x`.
fn sample_cell_field(f: &[f64], dx: f64, x: f64, kind: InterpKind) -> f64 {
    let n = f.len();
    let q = x / dx - 0.5;
    let i = q.floor();
    let t = q - i;
    let i = i as isize;
    let at = |o: isize| f[crate::grid::wrap_index(i + o, n)];
    match kind {
        InterpKind::Linear => (1.0 - t) * at(0) + t * at(1),
        InterpKind::Cubic => {
            let p = [at(-1), at(0), at(1), at(2)];
            let t2 = t * t;
            let t3 = t2 * t;
            0.5 * ((-t3 + 2.0 * t2 - t) * p[0]
                + (3.0 * t3 - 5.0 * t2 + 2.0) * p[1]
                + (-3.0 * t3 + 4.0 * t2 + t) * p[2]
                + (t3 - t2) * p[3])
        }
    }
}

/// Integrates `x' = n u*_j(t, x / n)` by forward Euler on the macro time
/// grid for every sampled vehicle. `macro_state` lives on `macro_grid` over
/// the unit-section road; `micro` is the same scenario rescaled by `n`.
pub fn constructed_controls(
    macro_state: &SolverState,
    macro_grid: &Grid,
    micro: &Scenario,
    initial_positions: Vec<Vec<f64>>,
    kde: &KdeSettings,
) -> Result<MicroEnsemble> {
    let nc = micro.n_classes();
    let n = micro.scale as f64;
    if macro_state.layout.n_classes != nc || initial_positions.len() != nc {
        return Err(invalid(
            "class counts of macro state, scenario and samples differ",
        ));
    }
    if (macro_grid.road_length * n - micro.road_length).abs() > 1e-9 * micro.road_length {
        return Err(invalid("micro road is not the macro road rescaled by n"));
    }
    if !(kde.bandwidth_factor > 0.0) {
        return Err(invalid("KDE bandwidth factor must be positive"));
    }
    let nt = macro_grid.nt;
    let dt = macro_grid.dt;
    let l = micro.road_length;
    let counts: Vec<usize> = initial_positions.iter().map(|p| p.len()).collect();
    let mut snapshots = Vec::with_capacity(nt + 1);
    snapshots.push(
        initial_positions
            .iter()
            .map(|p| p.iter().map(|x| x.rem_euclid(l)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    );
    let mut v_hat: Vec<Vec<Vec<f64>>> = counts
        .iter()
        .map(|&c| vec![Vec::with_capacity(nt); c])
        .collect();
    for step in 0..nt {
        let cur = &snapshots[step];
        let mut next = Vec::with_capacity(nc);
        for j in 0..nc {
            let u = macro_state.u(j, step);
            let mut row = Vec::with_capacity(counts[j]);
            for (i, &x) in cur[j].iter().enumerate() {
                let v = n * sample_cell_field(u, macro_grid.dx, x / n, InterpKind::Linear);
                if !v.is_finite() {
                    return Err(Error::Propagation {
                        class: j,
                        vehicle: i,
                        step,
                    });
                }
                v_hat[j][i].push(v);
                row.push((x + dt * v).rem_euclid(l));
            }
            next.push(row);
        }
        snapshots.push(next);
    }
    Ok(MicroEnsemble {
        scale: micro.scale,
        road_length: l,
        dt,
        nt,
        u_max: micro.classes.iter().map(|c| c.u_max).collect(),
        sigma: counts
            .iter()
            .map(|&c| kde.bandwidth_factor * c as f64)
            .collect(),
        mass: micro.specs.iter().map(|s| s.total_mass()).collect(),
        n_per_class: counts,
        snapshots,
        v_hat,
        v_bar: Vec::new(),
        j_hat: Vec::new(),
        j_bar: Vec::new(),
        eps: Vec::new(),
        converged: Vec::new(),
    })
}
