//! Run configuration: parsing, preset merging, validation.

use std::fmt;
use std::path::{Path, PathBuf};

use nmfg_core::continuation::Interpolation;
use nmfg_core::cost::ClassParams;
use nmfg_core::scenario::{Bump, InitialDensitySpec};
use nmfg_core::{
    build_scenario, BestResponseSettings, ContinuationSchedule, CostKind, CostModel, JacobianMode,
    KdeSettings, KrylovSettings, NewtonSettings, Rung, Scenario, ScenarioName,
};
use serde::{Deserialize, Serialize};

use crate::presets;

/// Environment variable overriding `workers`.
pub const WORKERS_ENV: &str = "NMFG_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Name(String),
    Inline(InlineScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineScenario {
    pub road_length: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub classes: Vec<InlineClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineClass {
    pub u_max: f64,
    pub vehicle_length: f64,
    #[serde(default = "one_f64")]
    pub section_length: f64,
    #[serde(default = "one_usize")]
    pub multiplicity: usize,
    #[serde(default)]
    pub bumps: Vec<Bump>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default)]
    pub rungs: Vec<Rung>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub max_newton_iters: usize,
    pub residual_tol: f64,
    pub krylov_restart: usize,
    pub augmentation_depth: usize,
    pub krylov_tol: f64,
    pub krylov_max_iters: usize,
    pub jacobian_mode: JacobianMode,
    pub refactor_every_iteration: bool,
    pub divergence_factor: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let n = NewtonSettings::default();
        Self {
            max_newton_iters: n.max_newton_iters,
            residual_tol: n.residual_tol,
            krylov_restart: n.krylov.restart,
            augmentation_depth: n.krylov.augmentation,
            krylov_tol: n.krylov.tol,
            krylov_max_iters: n.krylov.max_iters,
            jacobian_mode: n.jacobian_mode,
            refactor_every_iteration: n.refactor_every_iteration,
            divergence_factor: n.divergence_factor,
        }
    }
}

impl NewtonConfig {
    pub fn settings(&self) -> NewtonSettings {
        NewtonSettings {
            max_newton_iters: self.max_newton_iters,
            residual_tol: self.residual_tol,
            krylov: KrylovSettings {
                restart: self.krylov_restart,
                augmentation: self.augmentation_depth,
                tol: self.krylov_tol,
                max_iters: self.krylov_max_iters,
            },
            jacobian_mode: self.jacobian_mode,
            divergence_factor: self.divergence_factor,
            refactor_every_iteration: self.refactor_every_iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroConfig {
    pub enabled: bool,
    /// Vehicles per section; class `j` gets `multiplicity_j * n`.
    pub n_values: Vec<usize>,
    pub seed: u64,
    pub bandwidth_factor: f64,
    pub tau: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub step_tol: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        let b = BestResponseSettings::default();
        Self {
            enabled: false,
            n_values: vec![20, 40, 60, 80, 100],
            seed: 20240101,
            bandwidth_factor: KdeSettings::default().bandwidth_factor,
            tau: b.tau,
            tol: b.tol,
            max_iters: b.max_iters,
            step_tol: b.step_tol,
        }
    }
}

impl MicroConfig {
    pub fn best_response(&self) -> BestResponseSettings {
        BestResponseSettings {
            tau: self.tau,
            tol: self.tol,
            max_iters: self.max_iters,
            step_tol: self.step_tol,
        }
    }

    pub fn kde(&self) -> KdeSettings {
        KdeSettings {
            bandwidth_factor: self.bandwidth_factor,
        }
    }
}

/// Raw configuration as written, with every section defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<String>,
    /// Single grid; shorthand for a one-rung ladder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Rung>,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub micro: MicroConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "one_usize")]
    pub workers: usize,
}

fn default_horizon() -> f64 {
    nmfg_core::scenario::HORIZON
}

fn one_f64() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("nmfg-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            scenario: None,
            cost: None,
            grid: None,
            ladder: LadderConfig::default(),
            newton: NewtonConfig::default(),
            micro: MicroConfig::default(),
            output_dir: default_output(),
            workers: 1,
        }
    }
}

/// A configuration that passed validation, with its core objects built.
#[derive(Debug, Clone)]
pub struct ValidConfig {
    pub raw: RunConfig,
    pub scenario: Scenario,
    pub model: CostModel,
    pub schedule: ContinuationSchedule,
    pub newton: NewtonSettings,
    pub workers: usize,
}

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => {
                write!(f, "cannot read {}: {source}", path.display())
            }
            ConfigError::Parse {
                line,
                column,
                message,
            } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            ConfigError::Invalid(v) => {
                write!(f, "{} configuration error(s):", v.len())?;
                for e in v {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, col)
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    ConfigError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses configuration text, filling unspecified keys from the named
/// preset and then from built-in defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    // Type and key errors are reported against the user's own text.
    let own: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let Some(name) = own.preset.clone() else {
        return Ok(own);
    };
    let Some(base) = presets::preset(&name) else {
        return Err(ConfigError::Invalid(vec![format!(
            "unknown preset '{name}' (known: {})",
            presets::names().join(", ")
        )]));
    };
    let mut merged = toml::Table::try_from(&base).expect("presets serialize");
    merge(&mut merged, table);
    RunConfig::deserialize(toml::Value::Table(merged)).map_err(|e| ConfigError::Parse {
        line: 0,
        column: 0,
        message: e.to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Worker count after the environment override.
pub fn effective_workers(configured: usize) -> Result<usize, String> {
    match std::env::var(WORKERS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{WORKERS_ENV}='{s}' is not a positive integer")),
        },
        Err(_) => Ok(configured),
    }
}

fn inline_scenario(s: &InlineScenario) -> nmfg_core::Result<Scenario> {
    let classes = s
        .classes
        .iter()
        .map(|c| ClassParams::new(c.u_max, c.vehicle_length, c.section_length))
        .collect::<nmfg_core::Result<Vec<_>>>()?;
    let sc = Scenario {
        name: ScenarioName::Custom,
        classes,
        multiplicity: s.classes.iter().map(|c| c.multiplicity).collect(),
        road_length: s.road_length,
        horizon: s.horizon,
        specs: s
            .classes
            .iter()
            .map(|c| InitialDensitySpec {
                road_length: s.road_length,
                bumps: c.bumps.clone(),
            })
            .collect(),
        scale: 1,
    };
    sc.validate()?;
    Ok(sc)
}

fn check_writable(dir: &Path) -> Result<(), String> {
    let mut p = dir.to_path_buf();
    if p.as_os_str().is_empty() {
        p = PathBuf::from(".");
    }
    loop {
        match std::fs::metadata(&p) {
            Ok(m) if !m.is_dir() => {
                return Err(format!("output_dir: {} is not a directory", p.display()))
            }
            Ok(m) if m.permissions().readonly() => {
                return Err(format!("output_dir: {} is read-only", p.display()))
            }
            Ok(_) => return Ok(()),
            Err(_) => match p.parent() {
                Some(parent) if !parent.as_os_str().is_empty() => p = parent.to_path_buf(),
                _ => return Ok(()),
            },
        }
    }
}

/// Checks every invariant and collects all violations.
pub fn validate(raw: RunConfig) -> Result<ValidConfig, ConfigError> {
    let mut errs = Vec::new();

    let scenario = match &raw.scenario {
        None => {
            errs.push("scenario: missing".to_string());
            None
        }
        Some(ScenarioSpec::Name(n)) => {
            match ScenarioName::parse(n).and_then(|n| build_scenario(n, 1)) {
                Ok(s) => Some(s),
                Err(e) => {
                    errs.push(format!("scenario: {e}"));
                    None
                }
            }
        }
        Some(ScenarioSpec::Inline(s)) => match inline_scenario(s) {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("scenario: {e}"));
                None
            }
        },
    };

    let kind = match &raw.cost {
        None => {
            errs.push("cost: missing".to_string());
            None
        }
        Some(c) => match CostKind::parse(c) {
            Ok(k) => Some(k),
            Err(e) => {
                errs.push(format!("cost: {e}"));
                None
            }
        },
    };

    let model = match (kind, &scenario) {
        (Some(k), Some(s)) => match CostModel::new(k, s.classes.clone()) {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(format!(
                    "cost: {} with scenario {}: {e}",
                    k.name(),
                    s.name.as_str()
                ));
                None
            }
        },
        _ => None,
    };

    let rungs = match (&raw.grid, raw.ladder.rungs.is_empty()) {
        (Some(_), false) => {
            errs.push("grid and ladder.rungs are mutually exclusive".to_string());
            Vec::new()
        }
        (Some(g), true) => vec![*g],
        (None, _) => raw.ladder.rungs.clone(),
    };
    let schedule = ContinuationSchedule {
        rungs,
        interpolation: raw.ladder.interpolation,
    };
    errs.extend(
        schedule
            .violations()
            .into_iter()
            .map(|v| format!("ladder: {v}")),
    );

    let newton = raw.newton.settings();
    if raw.newton.max_newton_iters == 0 {
        errs.push("newton: max_newton_iters must be positive".to_string());
    }
    if let Err(e) = newton.validate() {
        errs.push(format!("newton: {e}"));
    }

    if raw.micro.enabled {
        let m = &raw.micro;
        if m.n_values.is_empty() {
            errs.push("micro: n_values is empty".to_string());
        }
        if m.n_values.contains(&0) {
            errs.push("micro: n_values must be positive".to_string());
        }
        if m.n_values.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("micro: n_values must be strictly increasing".to_string());
        }
        if !(m.bandwidth_factor > 0.0) {
            errs.push(format!(
                "micro: bandwidth_factor {} must be positive",
                m.bandwidth_factor
            ));
        }
        if let Err(e) = m.best_response().validate() {
            errs.push(format!("micro: {e}"));
        }
    }

    if raw.workers == 0 {
        errs.push("workers must be at least 1".to_string());
    }
    let workers = match effective_workers(raw.workers) {
        Ok(w) => w,
        Err(e) => {
            errs.push(e);
            1
        }
    };
    if let Err(e) = check_writable(&raw.output_dir) {
        errs.push(e);
    }

    if !errs.is_empty() {
        return Err(ConfigError::Invalid(errs));
    }
    Ok(ValidConfig {
        scenario: scenario.unwrap(),
        model: model.unwrap(),
        schedule,
        newton,
        workers,
        raw,
    })
}

pub fn load_and_validate(path: &Path) -> Result<ValidConfig, ConfigError> {
    validate(load_config(path)?)
}
