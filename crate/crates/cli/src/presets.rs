//! Named configurations reproducing the published experiments.

use nmfg_core::{JacobianMode, Rung};

use crate::config::{LadderConfig, MicroConfig, NewtonConfig, RunConfig, ScenarioSpec};

const ONE_CLASS: &[&str] = &[
    "lwr1-table1",
    "sep1-table2",
    "sep1-table2a",
    "nonsep1-table3",
    "nonsep1-table3a",
];
const TWO_CLASS_COSTS: &[&str] = &["glwr", "gs", "gns"];
const TWO_CLASS_SCENARIOS: &[&str] = &["tc", "ct", "tct"];

pub fn names() -> Vec<String> {
    let mut v: Vec<String> = ONE_CLASS.iter().map(|s| s.to_string()).collect();
    for c in TWO_CLASS_COSTS {
        for s in TWO_CLASS_SCENARIOS {
            v.push(format!("{c}-{s}"));
        }
    }
    v
}

fn ladder(rungs: &[(usize, usize, f64)]) -> LadderConfig {
    LadderConfig {
        rungs: rungs
            .iter()
            .map(|&(nx, nt, nu)| Rung { nx, nt, nu })
            .collect(),
        interpolation: Default::default(),
    }
}

fn base(name: &str, scenario: &str, cost: &str, rungs: &[(usize, usize, f64)]) -> RunConfig {
    RunConfig {
        preset: Some(name.to_string()),
        scenario: Some(ScenarioSpec::Name(scenario.to_string())),
        cost: Some(cost.to_string()),
        ladder: ladder(rungs),
        newton: NewtonConfig::default(),
        micro: MicroConfig::default(),
        ..RunConfig::default()
    }
}

/// ν-free ladders of the one-class tables.
const TABLE1: &[(usize, usize, f64)] = &[
    (15, 60, 0.0),
    (30, 120, 0.0),
    (60, 240, 0.0),
    (120, 480, 0.0),
    (240, 960, 0.0),
];
const REGULARIZED: &[(usize, usize, f64)] = &[
    (15, 60, 0.04),
    (30, 240, 0.04),
    (60, 720, 0.03),
    (120, 1920, 0.02),
    (240, 3840, 0.01),
];

/// Two-class ladders at the Courant factor 0.75 on the fastest class. The
/// ring scenarios go one rung further so the micro comparison is not
/// dominated by the scheme's numerical diffusion.
fn two_class_ladder(scenario: &str) -> &'static [(usize, usize, f64)] {
    match scenario {
        "tct" => &[(30, 20, 0.0), (60, 40, 0.0), (120, 80, 0.0)],
        _ => &[
            (30, 60, 0.0),
            (60, 120, 0.0),
            (120, 240, 0.0),
            (240, 480, 0.0),
        ],
    }
}

/// The decoupled factor stalls on the finer separable and two-class rungs.
/// LWR keeps it.
fn one_way(mut c: RunConfig) -> RunConfig {
    c.newton.jacobian_mode = JacobianMode::OneWay;
    c
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let cfg = match name {
        "lwr1-table1" => base(name, "one_class", "lwr1", TABLE1),
        "sep1-table2" => one_way(base(name, "one_class", "sep1", REGULARIZED)),
        "sep1-table2a" => one_way(base(name, "one_class", "sep1", TABLE1)),
        "nonsep1-table3" => one_way(base(name, "one_class", "nonsep1", REGULARIZED)),
        "nonsep1-table3a" => one_way(base(name, "one_class", "nonsep1", TABLE1)),
        _ => {
            let (cost, scenario) = name.split_once('-')?;
            if !TWO_CLASS_COSTS.contains(&cost) || !TWO_CLASS_SCENARIOS.contains(&scenario) {
                return None;
            }
            let mut c = one_way(base(name, scenario, cost, two_class_ladder(scenario)));
            c.micro.enabled = cost != "glwr";
            c
        }
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate;

    #[test]
    fn every_preset_validates() {
        for n in names() {
            let c = preset(&n).unwrap();
            if let Err(e) = validate(c) {
                panic!("{n}: {e}");
            }
        }
        assert_eq!(names().len(), 14);
        assert!(preset("gs-xy").is_none());
    }

    #[test]
    fn regularized_rungs_respect_the_diffusive_step() {
        for &(nx, nt, nu) in REGULARIZED {
            let dx = 1.0 / nx as f64;
            let dt = 3.0 / nt as f64;
            assert!(nu * dt / (dx * dx) <= 0.5 + 1e-12, "{nx}x{nt}");
        }
    }
}
