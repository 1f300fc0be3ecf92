//! Grid ladders and viscosity continuation.
//!
//! A schedule is a list of rungs `(nx, nt, nu)`. Rung 0 is solved from the
//! zero state; every later rung starts from the previous solution resampled
//! onto its grid.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{invalid, Error, Result};
use crate::grid::{check_viscosity, wrap_index, Grid};
use crate::newton::{newton_solve, NewtonSettings, SolveReport};
use crate::residual::{Field, MfgProblem, SolverState, UnknownLayout};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpKind {
    Linear,
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpolation {
    pub space: InterpKind,
    pub time: InterpKind,
}

impl Default for Interpolation {
    fn default() -> Self {
        Self {
            space: InterpKind::Cubic,
            time: InterpKind::Linear,
        }
    }
}

#[inline]
fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((-t3 + 2.0 * t2 - t) * p[0]
        + (3.0 * t3 - 5.0 * t2 + 2.0) * p[1]
        + (-3.0 * t3 + 4.0 * t2 + t) * p[2]
        + (t3 - t2) * p[3])
}

/// Interpolates periodic samples `f[k]` at fractional index `q`.
fn sample_periodic(f: &[f64], q: f64, kind: InterpKind) -> f64 {
    let n = f.len();
    let i = q.floor();
    let t = q - i;
    let i = i as isize;
    let at = |o: isize| f[wrap_index(i + o, n)];
    if t == 0.0 {
        return at(0);
    }
    match kind {
        InterpKind::Linear => (1.0 - t) * at(0) + t * at(1),
        InterpKind::Cubic => catmull_rom([at(-1), at(0), at(1), at(2)], t),
    }
}

/// Fractional source index of target sample `k` for a field whose sample
/// `k` sits at `(k + offset) * L / n`. Computed from integers so coincident
/// samples land exactly on whole numbers.
fn source_index(k: usize, n_to: usize, n_from: usize, offset_num: usize, offset_den: usize) -> f64 {
    // (k + o) n_from / n_to - o, with o = offset_num / offset_den
    let num = ((k * offset_den + offset_num) * n_from) as i128 - (offset_num * n_to) as i128;
    num as f64 / (offset_den * n_to) as f64
}

fn field_offset(field: Field) -> (usize, usize) {
    match field {
        Field::Rho | Field::U => (1, 2),
        Field::V => (1, 1),
    }
}

/// Resamples every field of `state` from grid `from` onto grid `to`.
///
/// Space is periodic, time is clamped at both ends. Samples whose positions
/// coincide on both grids are copied exactly.
pub fn resample(
    state: &SolverState,
    from: &Grid,
    to: &Grid,
    interp: Interpolation,
) -> Result<SolverState> {
    if state.layout != UnknownLayout::for_grid(from, state.layout.n_classes) {
        return Err(invalid("state does not live on the source grid"));
    }
    if (from.road_length - to.road_length).abs() > 1e-12 * from.road_length
        || (from.horizon - to.horizon).abs() > 1e-12 * from.horizon
    {
        return Err(invalid("grids cover different domains"));
    }
    let nc = state.layout.n_classes;
    let layout = UnknownLayout::for_grid(to, nc);
    let mut out = SolverState::zeros(layout);
    let mut spatial = vec![0.0; to.nx];
    for field in [Field::Rho, Field::U, Field::V] {
        let (on, od) = field_offset(field);
        let levels_from = state.layout.levels(field);
        for j in 0..nc {
            // Spatially resampled source levels, computed lazily.
            let mut cache: Vec<Option<Vec<f64>>> = vec![None; levels_from];
            let level = |n: usize, cache: &mut Vec<Option<Vec<f64>>>| -> Vec<f64> {
                if cache[n].is_none() {
                    let src = state.field(field, j, n);
                    let row = (0..to.nx)
                        .map(|k| {
                            sample_periodic(
                                src,
                                source_index(k, to.nx, from.nx, on, od),
                                interp.space,
                            )
                        })
                        .collect();
                    cache[n] = Some(row);
                }
                cache[n].clone().unwrap()
            };
            for n in 0..layout.levels(field) {
                let q = (n * from.nt) as f64 / to.nt as f64;
                let q = q.min((levels_from - 1) as f64);
                let i = q.floor() as usize;
                let t = q - i as f64;
                if t == 0.0 {
                    spatial.copy_from_slice(&level(i, &mut cache));
                } else {
                    match interp.time {
                        InterpKind::Linear => {
                            let a = level(i, &mut cache);
                            let b = level(i + 1, &mut cache);
                            for k in 0..to.nx {
                                spatial[k] = (1.0 - t) * a[k] + t * b[k];
                            }
                        }
                        InterpKind::Cubic => {
                            let last = levels_from - 1;
                            let a = level(i.saturating_sub(1), &mut cache);
                            let b = level(i, &mut cache);
                            let c = level((i + 1).min(last), &mut cache);
                            let d = level((i + 2).min(last), &mut cache);
                            for k in 0..to.nx {
                                spatial[k] = catmull_rom([a[k], b[k], c[k], d[k]], t);
                            }
                        }
                    }
                }
                out.field_mut(field, j, n).copy_from_slice(&spatial);
            }
        }
    }
    Ok(out)
}

/// Coarse-to-fine interpolation of an initial guess.
pub fn prolong(
    state: &SolverState,
    from: &Grid,
    to: &Grid,
    interp: Interpolation,
) -> Result<SolverState> {
    if to.nx < from.nx || to.nt < from.nt {
        return Err(invalid("prolongation needs a grid at least as fine"));
    }
    resample(state, from, to, interp)
}

/// Fine-to-coarse nodal sampling.
pub fn restrict(state: &SolverState, from: &Grid, to: &Grid) -> Result<SolverState> {
    if to.nx > from.nx || to.nt > from.nt {
        return Err(invalid("restriction needs a grid at least as coarse"));
    }
    resample(state, from, to, Interpolation::default())
}

/// Root-mean-square difference over all unknowns.
pub fn rmse(a: &SolverState, b: &SolverState) -> Result<f64> {
    if a.layout != b.layout {
        return Err(invalid("rmse needs states on the same layout"));
    }
    let s: f64 = a.w.iter().zip(&b.w).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.w.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub nx: usize,
    pub nt: usize,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    pub rungs: Vec<Rung>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl ContinuationSchedule {
    pub fn new(rungs: Vec<Rung>) -> Result<Self> {
        let s = Self {
            rungs,
            interpolation: Interpolation::default(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.rungs.is_empty() {
            v.push("schedule has no rungs".to_string());
        }
        for (i, r) in self.rungs.iter().enumerate() {
            if let Err(e) = check_viscosity(r.nu) {
                v.push(format!("rung {i}: {e}"));
            }
            if r.nx < 3 || r.nt < 1 {
                v.push(format!("rung {i}: grid {}x{} too small", r.nx, r.nt));
            }
        }
        for (i, w) in self.rungs.windows(2).enumerate() {
            if w[1].nx <= w[0].nx {
                v.push(format!(
                    "rung {}: nx {} not above previous {}",
                    i + 1,
                    w[1].nx,
                    w[0].nx
                ));
            }
            if w[1].nt < w[0].nt {
                v.push(format!(
                    "rung {}: nt {} below previous {}",
                    i + 1,
                    w[1].nt,
                    w[0].nt
                ));
            }
            if w[1].nu > w[0].nu {
                v.push(format!(
                    "rung {}: nu {} above previous {}",
                    i + 1,
                    w[1].nu,
                    w[0].nu
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(_) => Err(invalid(self.violations().join("; "))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungReport {
    pub rung: usize,
    pub nx: usize,
    pub nt: usize,
    pub nu: f64,
    pub report: SolveReport,
}

#[derive(Debug)]
pub struct ContinuationOutcome {
    /// Last successfully solved state and its grid.
    pub state: Option<(SolverState, Grid)>,
    pub reports: Vec<RungReport>,
    /// Set when a rung aborted; later rungs were not attempted.
    pub failure: Option<Error>,
}

impl ContinuationOutcome {
    pub fn into_result(self) -> Result<(SolverState, Grid, Vec<RungReport>)> {
        match (self.failure, self.state) {
            (Some(e), _) => Err(e),
            (None, Some((s, g))) => Ok((s, g, self.reports)),
            (None, None) => Err(invalid("empty schedule")),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.failure.is_none() && self.reports.iter().all(|r| r.report.converged)
    }
}

pub fn rung_problem(rung: &Rung, model: &CostModel, scenario: &Scenario) -> Result<MfgProblem> {
    let grid = Grid::new(scenario.road_length, scenario.horizon, rung.nx, rung.nt)?;
    MfgProblem::new(
        model.clone(),
        grid,
        rung.nu,
        scenario.initial_density(&grid),
    )
}

pub fn run_schedule(
    schedule: &ContinuationSchedule,
    model: &CostModel,
    scenario: &Scenario,
    settings: &NewtonSettings,
) -> Result<ContinuationOutcome> {
    schedule.validate()?;
    settings.validate()?;
    if model.n_classes() != scenario.n_classes() {
        return Err(invalid("model and scenario class counts differ"));
    }
    let mut outcome = ContinuationOutcome {
        state: None,
        reports: Vec::new(),
        failure: None,
    };
    for (i, rung) in schedule.rungs.iter().enumerate() {
        let step = (|| -> Result<(SolverState, Grid, SolveReport)> {
            let problem = rung_problem(rung, model, scenario)?;
            let guess = match &outcome.state {
                None => SolverState::zeros(problem.layout()),
                Some((prev, g)) => prolong(prev, g, &problem.grid, schedule.interpolation)?,
            };
            let seeded = outcome.state.is_some();
            let (sol, mut report) = newton_solve(guess.clone(), &problem, settings)?;
            if seeded {
                report.rmse_vs_reference = Some(rmse(&guess, &sol)?);
            }
            Ok((sol, problem.grid, report))
        })();
        match step {
            Ok((sol, grid, report)) => {
                outcome.reports.push(RungReport {
                    rung: i,
                    nx: rung.nx,
                    nt: rung.nt,
                    nu: rung.nu,
                    report,
                });
                outcome.state = Some((sol, grid));
            }
            Err(e) => {
                outcome.failure = Some(Error::RungFailed {
                    rung: i,
                    source: Box::new(e),
                });
                break;
            }
        }
    }
    Ok(outcome)
}
