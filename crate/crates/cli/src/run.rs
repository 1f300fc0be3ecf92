//! Macro solve followed by optional microscopic validation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use nmfg_core::micro::{
    constructed_controls, epsilon_report, fit_slopes, run_best_responses, sample_initial_positions,
};
use nmfg_core::residual::mass;
use nmfg_core::{run_schedule, CostModel, Error, Grid, SolverState};

use crate::artifacts::{self, *};
use crate::config::ValidConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Continuation ladder only.
    Macro,
    /// Ladder, then the micro block when it is enabled.
    Bridge,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub report: SolveReportFile,
    pub accuracy: Option<AccuracyFile>,
    pub failure: Option<FailureRecord>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

const STALE: &[&str] = &[
    MACRO_FIELDS,
    FUNDAMENTAL,
    SOLVE_REPORT,
    MICRO_VEHICLES,
    MICRO_COSTS,
    ACCURACY,
    FAILURE,
];

/// Short machine-readable name of an error and the rung it names, if any.
pub fn classify(e: &Error) -> (&'static str, Option<usize>) {
    match e {
        Error::RungFailed { rung, source } => (classify(source).0, Some(*rung)),
        Error::InvalidParameter(_) => ("invalid_parameter", None),
        Error::DimensionMismatch { .. } => ("dimension_mismatch", None),
        Error::NumericalOverflow { .. } => ("numerical_overflow", None),
        Error::SingularPreconditioner { .. } => ("singular_preconditioner", None),
        Error::Divergence { .. } => ("divergence", None),
        Error::Propagation { .. } => ("propagation", None),
        Error::UndefinedMetric(_) => ("undefined_metric", None),
    }
}

fn mass_drift(state: &SolverState, grid: &Grid) -> Result<Vec<MassDrift>> {
    (0..state.layout.n_classes)
        .map(|j| {
            let m = mass(state, grid, j)?;
            let max_abs = m.iter().map(|v| (v - m[0]).abs()).fold(0.0, f64::max);
            Ok(MassDrift { class: j, max_abs })
        })
        .collect()
}

/// Runs the configured pipeline and writes every artifact into the output
/// directory. Solver failures are recorded in the summary (and in
/// `failure.json`) rather than returned as errors.
pub fn run(cfg: &ValidConfig, stage: Stage) -> Result<RunSummary> {
    let dir = cfg.raw.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for name in STALE {
        let p = dir.join(name);
        if p.exists() {
            std::fs::remove_file(&p).with_context(|| format!("removing stale {}", p.display()))?;
        }
    }
    std::fs::write(dir.join(CONFIG_ECHO), toml::to_string(&cfg.raw)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()?;
    pool.install(|| pipeline(cfg, stage, &dir))
}

fn pipeline(cfg: &ValidConfig, stage: Stage, dir: &Path) -> Result<RunSummary> {
    log(&format!(
        "solving {} / {} on {} rung(s) with {} worker(s)",
        cfg.model.kind.name(),
        cfg.scenario.name.as_str(),
        cfg.schedule.rungs.len(),
        cfg.workers
    ));
    let outcome = run_schedule(&cfg.schedule, &cfg.model, &cfg.scenario, &cfg.newton)?;
    let rungs: Vec<RungEntry> = outcome.reports.iter().map(RungEntry::from).collect();
    for r in &rungs {
        log(&format!(
            "rung {} {}x{} nu={}: {} iterations, residual {:.3e}{}",
            r.rung,
            r.nx,
            r.nt,
            r.nu,
            r.iterations,
            r.final_residual,
            if r.converged { "" } else { " (not converged)" }
        ));
    }
    let mut failure = match &outcome.failure {
        Some(e) => {
            let (kind, rung) = classify(e);
            Some(FailureRecord {
                stage: "macro".into(),
                kind: kind.into(),
                rung,
                n: None,
                message: e.to_string(),
            })
        }
        None => rungs.iter().find(|r| !r.converged).map(|r| FailureRecord {
            stage: "macro".into(),
            kind: "not_converged".into(),
            rung: Some(r.rung),
            n: None,
            message: format!(
                "rung {} stopped after {} iterations at residual {:.3e}",
                r.rung, r.iterations, r.final_residual
            ),
        }),
    };
    let drift = match &outcome.state {
        Some((s, g)) => mass_drift(s, g)?,
        None => Vec::new(),
    };
    let mut report = SolveReportFile {
        schema_version: SCHEMA_VERSION,
        preset: cfg.raw.preset.clone(),
        scenario: cfg.scenario.name.as_str().into(),
        cost: cfg.model.kind.name().into(),
        workers: cfg.workers,
        converged: failure.is_none(),
        rungs,
        mass_drift: drift,
        failure: failure.clone(),
    };
    if let Some((s, g)) = &outcome.state {
        write_macro_fields(dir, s, g)?;
        write_fundamental(dir, s, g)?;
    }

    let mut accuracy = None;
    if failure.is_none() && stage == Stage::Bridge && cfg.raw.micro.enabled {
        let (s, g) = outcome.state.as_ref().expect("converged run has a state");
        let (acc, micro_failure) = micro(cfg, s, g, dir)?;
        accuracy = Some(acc);
        if micro_failure.is_some() {
            failure = micro_failure;
            report.failure = failure.clone();
        }
    }
    write_json(dir, SOLVE_REPORT, &report)?;
    if let Some(f) = &failure {
        write_json(dir, FAILURE, f)?;
        log(&format!("failed: {}", f.message));
    }
    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        report,
        accuracy,
        failure,
    })
}

fn micro(
    cfg: &ValidConfig,
    state: &SolverState,
    grid: &Grid,
    dir: &Path,
) -> Result<(AccuracyFile, Option<FailureRecord>)> {
    let m = &cfg.raw.micro;
    let mut writers = MicroWriters::create(dir)?;
    let mut file = AccuracyFile {
        schema_version: SCHEMA_VERSION,
        runs: Vec::new(),
        mu: None,
        eta: None,
    };
    for &n in &m.n_values {
        let start = Instant::now();
        let step = || -> nmfg_core::Result<_> {
            let scenario = cfg.scenario.rescaled(n)?;
            let x0 = sample_initial_positions(&scenario, m.seed)?;
            let mut ens = constructed_controls(state, grid, &scenario, x0, &m.kde())?;
            let cost = CostModel::new(cfg.model.kind, scenario.classes.clone())?;
            run_best_responses(&mut ens, &cost, &m.best_response())?;
            let rep = epsilon_report(&ens)?;
            Ok((ens, rep))
        };
        match step() {
            Ok((ens, rep)) => {
                writers.append(&ens)?;
                let entry = AccuracyEntry::new(n, &rep, start.elapsed().as_secs_f64());
                log(&format!(
                    "micro n={n}: MaxRA {:.4e}, MeanRA {:.4e}, {} unconverged",
                    entry.max_ra, entry.mean_ra, entry.unconverged
                ));
                file.runs.push(entry);
            }
            Err(e) => {
                let (kind, _) = classify(&e);
                let f = FailureRecord {
                    stage: "micro".into(),
                    kind: kind.into(),
                    rung: None,
                    n: Some(n),
                    message: e.to_string(),
                };
                write_json(dir, artifacts::ACCURACY, &file)?;
                return Ok((file, Some(f)));
            }
        }
    }
    if file.runs.len() >= 3 {
        let ns: Vec<usize> = file.runs.iter().map(|r| r.n).collect();
        let max: Vec<f64> = file.runs.iter().map(|r| r.max_ra).collect();
        let mean: Vec<f64> = file.runs.iter().map(|r| r.mean_ra).collect();
        if let Ok((mu, eta)) = fit_slopes(&ns, &max, &mean) {
            file.mu = Some(mu);
            file.eta = Some(eta);
        }
    }
    write_json(dir, ACCURACY, &file)?;
    Ok((file, None))
}

fn log(msg: &str) {
    if std::env::var_os("NMFG_QUIET").is_none() {
        eprintln!("nmfg: {msg}");
    }
}
