//! Plain-text summary of an output directory.

use std::fmt::Write;
use std::path::Path;

use anyhow::Result;

use crate::artifacts::{
    read_json, AccuracyFile, FailureRecord, SolveReportFile, ACCURACY, FAILURE, SOLVE_REPORT,
};

pub fn summarize(dir: &Path) -> Result<String> {
    let rep: SolveReportFile = read_json(dir, SOLVE_REPORT)?;
    let mut s = String::new();
    writeln!(
        s,
        "{} / {}{}",
        rep.cost,
        rep.scenario,
        rep.preset
            .as_deref()
            .map(|p| format!(" (preset {p})"))
            .unwrap_or_default()
    )?;
    writeln!(
        s,
        "{:>4} {:>6} {:>6} {:>6} {:>5} {:>7} {:>10} {:>8} {:>9}",
        "rung", "nx", "nt", "nu", "iter", "krylov", "residual", "rmse", "time[s]"
    )?;
    for r in &rep.rungs {
        writeln!(
            s,
            "{:>4} {:>6} {:>6} {:>6} {:>5} {:>7} {:>10.2e} {:>8} {:>9.2}{}",
            r.rung,
            r.nx,
            r.nt,
            r.nu,
            r.iterations,
            r.krylov_iterations,
            r.final_residual,
            r.rmse.map_or("-".to_string(), |v| format!("{v:.4}")),
            r.wall_time,
            if r.converged { "" } else { "  not converged" }
        )?;
    }
    for d in &rep.mass_drift {
        writeln!(s, "class {} mass drift {:.2e}", d.class, d.max_abs)?;
    }
    if dir.join(ACCURACY).exists() {
        let acc: AccuracyFile = read_json(dir, ACCURACY)?;
        writeln!(
            s,
            "{:>5} {:>9} {:>11} {:>11} {:>9} {:>11}",
            "n", "vehicles", "MaxRA", "MeanRA", "e_v max", "unconverged"
        )?;
        for r in &acc.runs {
            writeln!(
                s,
                "{:>5} {:>9} {:>11.4e} {:>11.4e} {:>9.4} {:>11}",
                r.n, r.n_vehicles, r.max_ra, r.mean_ra, r.e_v_max, r.unconverged
            )?;
        }
        if let (Some(mu), Some(eta)) = (acc.mu, acc.eta) {
            writeln!(s, "mu = {mu:.3}, eta = {eta:.3}")?;
        }
    }
    if dir.join(FAILURE).exists() {
        let f: FailureRecord = read_json(dir, FAILURE)?;
        writeln!(s, "FAILED ({} stage, {}): {}", f.stage, f.kind, f.message)?;
    }
    Ok(s)
}
