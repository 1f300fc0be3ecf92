//! CSV and JSON artifact writers.
//!
//! Floats are written with 17 significant digits so every value round-trips.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use nmfg_core::micro::AccuracyReport;
use nmfg_core::{Grid, MicroEnsemble, RungReport, SolverState};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const MACRO_FIELDS: &str = "macro_fields.csv";
pub const FUNDAMENTAL: &str = "fundamental.csv";
pub const SOLVE_REPORT: &str = "solve_report.json";
pub const MICRO_VEHICLES: &str = "micro_vehicles.csv";
pub const MICRO_COSTS: &str = "micro_costs.csv";
pub const ACCURACY: &str = "accuracy.json";
pub const FAILURE: &str = "failure.json";
pub const CONFIG_ECHO: &str = "config.toml";

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `class,n,k,t,x,rho,u,V`. Every row sits at cell centre `x`; `V` there is
/// the nodal value at the cell's right edge `x + dx/2`. The speed is blank
/// on the final time level, where it is not an unknown.
pub fn write_macro_fields(dir: &Path, state: &SolverState, grid: &Grid) -> Result<()> {
    let mut w = create(dir, MACRO_FIELDS)?;
    writeln!(w, "class,n,k,t,x,rho,u,V")?;
    for j in 0..state.layout.n_classes {
        for n in 0..=grid.nt {
            let rho = state.rho(j, n);
            let v = state.v(j, n);
            let u = (n < grid.nt).then(|| state.u(j, n));
            for k in 0..grid.nx {
                let us = u.map_or(String::new(), |u| fmt_f64(u[k]));
                writeln!(
                    w,
                    "{j},{n},{k},{},{},{},{us},{}",
                    fmt_f64(grid.time(n)),
                    fmt_f64(grid.cell_center(k)),
                    fmt_f64(rho[k]),
                    fmt_f64(v[k])
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `class,rho_self,rho_other,flow,speed` for every cell and time level that
/// carries a speed. `rho_other` is the summed density of the other classes.
pub fn write_fundamental(dir: &Path, state: &SolverState, grid: &Grid) -> Result<()> {
    let mut w = create(dir, FUNDAMENTAL)?;
    writeln!(w, "class,rho_self,rho_other,flow,speed")?;
    let nc = state.layout.n_classes;
    for j in 0..nc {
        for n in 0..grid.nt {
            let rho = state.rho(j, n);
            let u = state.u(j, n);
            for k in 0..grid.nx {
                let other: f64 = (0..nc)
                    .filter(|&m| m != j)
                    .map(|m| state.rho(m, n)[k])
                    .sum();
                writeln!(
                    w,
                    "{j},{},{},{},{}",
                    fmt_f64(rho[k]),
                    fmt_f64(other),
                    fmt_f64(rho[k] * u[k]),
                    fmt_f64(u[k])
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungEntry {
    pub rung: usize,
    pub nx: usize,
    pub nt: usize,
    pub nu: f64,
    pub iterations: usize,
    pub krylov_iterations: usize,
    pub inexact_steps: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Against the prolonged coarse solution; absent on the first rung.
    pub rmse: Option<f64>,
    pub converged: bool,
    pub wall_time: f64,
    pub residual_history: Vec<f64>,
}

impl From<&RungReport> for RungEntry {
    fn from(r: &RungReport) -> Self {
        Self {
            rung: r.rung,
            nx: r.nx,
            nt: r.nt,
            nu: r.nu,
            iterations: r.report.iterations,
            krylov_iterations: r.report.krylov_iterations,
            inexact_steps: r.report.inexact_steps,
            initial_residual: r.report.initial_residual,
            final_residual: r.report.final_residual,
            rmse: r.report.rmse_vs_reference,
            converged: r.report.converged,
            wall_time: r.report.wall_time,
            residual_history: r.report.residual_history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassDrift {
    pub class: usize,
    /// `max_n |M(t_n) - M(0)|`.
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportFile {
    pub schema_version: u32,
    pub preset: Option<String>,
    pub scenario: String,
    pub cost: String,
    pub workers: usize,
    pub rungs: Vec<RungEntry>,
    pub converged: bool,
    pub mass_drift: Vec<MassDrift>,
    pub failure: Option<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    /// `macro` or `micro`.
    pub stage: String,
    /// Machine-readable cause.
    pub kind: String,
    pub rung: Option<usize>,
    pub n: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub n: usize,
    pub n_vehicles: usize,
    pub max_ra: f64,
    pub mean_ra: f64,
    pub e_v_max: f64,
    pub e_v_mean: f64,
    pub min_eps: f64,
    pub unconverged: usize,
    pub wall_time: f64,
}

impl AccuracyEntry {
    pub fn new(n: usize, r: &AccuracyReport, wall_time: f64) -> Self {
        Self {
            n,
            n_vehicles: r.n_vehicles,
            max_ra: r.max_ra,
            mean_ra: r.mean_ra,
            e_v_max: r.e_v_max,
            e_v_mean: r.e_v_mean,
            min_eps: r.min_eps,
            unconverged: r.unconverged,
            wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyFile {
    pub schema_version: u32,
    pub runs: Vec<AccuracyEntry>,
    /// Decay rate of MaxRA; absent with fewer than three runs.
    pub mu: Option<f64>,
    /// Decay rate of MeanRA.
    pub eta: Option<f64>,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Opens both micro CSVs and writes their headers.
pub struct MicroWriters {
    vehicles: BufWriter<File>,
    costs: BufWriter<File>,
}

impl MicroWriters {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut vehicles = create(dir, MICRO_VEHICLES)?;
        let mut costs = create(dir, MICRO_COSTS)?;
        writeln!(vehicles, "n,class,vehicle,t,x,v_hat,v_bar")?;
        writeln!(costs, "n,class,vehicle,J_hat,J_bar,eps,converged")?;
        Ok(Self { vehicles, costs })
    }

    /// Appends one ensemble. Speeds are blank at the final time, which has a
    /// position but no control.
    pub fn append(&mut self, ens: &MicroEnsemble) -> Result<()> {
        let n = ens.scale;
        let done = ens.has_best_responses();
        for j in 0..ens.n_classes() {
            for i in 0..ens.n_per_class[j] {
                for step in 0..=ens.nt {
                    let x = ens.snapshots[step][j][i];
                    let (vh, vb) = if step < ens.nt {
                        let vb = if done {
                            fmt_f64(ens.v_bar[j][i][step])
                        } else {
                            String::new()
                        };
                        (fmt_f64(ens.v_hat[j][i][step]), vb)
                    } else {
                        (String::new(), String::new())
                    };
                    writeln!(
                        self.vehicles,
                        "{n},{j},{i},{},{},{vh},{vb}",
                        fmt_f64(step as f64 * ens.dt),
                        fmt_f64(x)
                    )?;
                }
                if done {
                    writeln!(
                        self.costs,
                        "{n},{j},{i},{},{},{},{}",
                        fmt_f64(ens.j_hat[j][i]),
                        fmt_f64(ens.j_bar[j][i]),
                        fmt_f64(ens.eps[j][i]),
                        ens.converged[j][i]
                    )?;
                }
            }
        }
        self.vehicles.flush()?;
        self.costs.flush()?;
        Ok(())
    }
}
