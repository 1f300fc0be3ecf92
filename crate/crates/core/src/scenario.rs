//! Road configurations and truncated Gaussian-bump initial densities.

use serde::{Deserialize, Serialize};

use crate::cost::ClassParams;
use crate::error::{invalid, Result};
use crate::grid::Grid;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub x1: f64,
    pub x2: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub gamma: f64,
}

impl Bump {
    pub fn theta(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }

    /// Profile inside the support (no mask).
    #[inline]
    fn profile(&self, x: f64) -> f64 {
        let d = x - self.theta();
        self.rho_a + (self.rho_b - self.rho_a) * (-d * d / (2.0 * self.gamma * self.gamma)).exp()
    }

    #[inline]
    fn contains(&self, x: f64) -> bool {
        x >= self.x1 && x <= self.x2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDensitySpec {
    pub road_length: f64,
    pub bumps: Vec<Bump>,
}

impl InitialDensitySpec {
    pub fn validate(&self, rho_jam: f64) -> Result<()> {
        let mut sorted = self.bumps.clone();
        sorted.sort_by(|a, b| a.x1.total_cmp(&b.x1));
        for b in &sorted {
            if !(b.x1 >= 0.0 && b.x2 <= self.road_length && b.x1 < b.x2) {
                return Err(invalid(format!(
                    "bump [{}, {}] not inside [0, {}]",
                    b.x1, b.x2, self.road_length
                )));
            }
            if !(b.gamma > 0.0) {
                return Err(invalid(format!("bump width {} must be positive", b.gamma)));
            }
            if !(0.0 <= b.rho_a && b.rho_a <= b.rho_b && b.rho_b <= rho_jam * (1.0 + 1e-12)) {
                return Err(invalid(format!(
                    "bump densities ({}, {}) violate 0 <= a <= b <= {rho_jam}",
                    b.rho_a, b.rho_b
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[1].x1 < w[0].x2 {
                return Err(invalid(format!(
                    "bumps [{}, {}] and [{}, {}] overlap",
                    w[0].x1, w[0].x2, w[1].x1, w[1].x2
                )));
            }
        }
        Ok(())
    }

    /// Initial density at `x`, evaluated on the ring: a point that misses a
    /// bump is also tried one period to the right, so a bump ending at `L`
    /// covers `x = 0`.
    pub fn density_at(&self, x: f64) -> f64 {
        let l = self.road_length;
        let x = x.rem_euclid(l);
        self.bumps
            .iter()
            .map(|b| {
                if b.contains(x) {
                    b.profile(x)
                } else if b.contains(x + l) {
                    b.profile(x + l)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Exact-to-quadrature cell averages: five-point Gauss-Legendre on each
    /// piece of the cell between bump edges.
    pub fn cell_averages(&self, grid: &Grid) -> Vec<f64> {
        let mut edges: Vec<f64> = self.bumps.iter().flat_map(|b| [b.x1, b.x2]).collect();
        edges.sort_by(f64::total_cmp);
        (0..grid.nx)
            .map(|k| {
                let a = k as f64 * grid.dx;
                let b = a + grid.dx;
                let mut cuts = vec![a];
                cuts.extend(edges.iter().copied().filter(|&e| e > a && e < b));
                cuts.push(b);
                let total: f64 = cuts.windows(2).map(|w| self.gauss5(w[0], w[1])).sum();
                total / grid.dx
            })
            .collect()
    }

    fn gauss5(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        // Interior points of a piece never sit on an edge, so the mask is
        // evaluated unambiguously.
        GL5_X
            .iter()
            .zip(GL5_W)
            .map(|(x, w)| w * self.density_at(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Integral of the density over the ring.
    pub fn total_mass(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let pieces = 200;
                let h = (b.x2 - b.x1) / pieces as f64;
                (0..pieces)
                    .map(|i| {
                        let a = b.x1 + i as f64 * h;
                        let mid = a + 0.5 * h;
                        GL5_X
                            .iter()
                            .zip(GL5_W)
                            .map(|(x, w)| w * b.profile(mid + 0.5 * h * x))
                            .sum::<f64>()
                            * 0.5
                            * h
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Rescales positions and widths by `n` and densities by `density_factor`.
    fn scaled(&self, n: f64, density_factor: f64) -> Self {
        Self {
            road_length: self.road_length * n,
            bumps: self
                .bumps
                .iter()
                .map(|b| Bump {
                    x1: b.x1 * n,
                    x2: b.x2 * n,
                    rho_a: b.rho_a * density_factor,
                    rho_b: b.rho_b * density_factor,
                    gamma: b.gamma * n,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    /// Cars ahead of trucks.
    Tc,
    /// Trucks ahead of cars.
    Ct,
    /// Interlaced, three sections per class.
    Tct,
    /// Single class on a unit ring.
    OneClass,
    /// Loaded from a configuration file.
    Custom,
}

impl ScenarioName {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tc" => Self::Tc,
            "ct" => Self::Ct,
            "tct" => Self::Tct,
            "one_class" | "oneclass" => Self::OneClass,
            "custom" => Self::Custom,
            other => return Err(invalid(format!("unknown scenario '{other}'"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tc => "tc",
            Self::Ct => "ct",
            Self::Tct => "tct",
            Self::OneClass => "one_class",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub classes: Vec<ClassParams>,
    /// Sections per class.
    pub multiplicity: Vec<usize>,
    pub road_length: f64,
    pub horizon: f64,
    pub specs: Vec<InitialDensitySpec>,
    /// Vehicles per section (1 for the macroscopic road).
    pub scale: usize,
}

pub const HORIZON: f64 = 3.0;
const TWO_CLASS_GAMMA: f64 = 0.15;

fn car_truck_bumps(car_sections: &[f64], truck_sections: &[f64]) -> [Vec<Bump>; 2] {
    let mk = |starts: &[f64], rho_b: f64| {
        starts
            .iter()
            .map(|&x| Bump {
                x1: x,
                x2: x + 1.0,
                rho_a: 0.0,
                rho_b,
                gamma: TWO_CLASS_GAMMA,
            })
            .collect::<Vec<_>>()
    };
    [mk(car_sections, 1.0), mk(truck_sections, 0.5)]
}

/// Builds a preset. `n = 1` gives the macroscopic road with unit sections;
/// larger `n` gives the microscopic road with `L_j = n`, where positions,
/// widths, free-flow speeds and densities are all multiplied by `n`.
pub fn build_scenario(name: ScenarioName, n: usize) -> Result<Scenario> {
    if n < 1 {
        return Err(invalid("scale n must be at least 1"));
    }
    let base = match name {
        ScenarioName::Custom => return Err(invalid("custom scenarios have no built-in layout")),
        ScenarioName::OneClass => Scenario {
            name,
            classes: vec![ClassParams::new(1.0, 1.0, 1.0)?],
            multiplicity: vec![1],
            road_length: 1.0,
            horizon: HORIZON,
            specs: vec![InitialDensitySpec {
                road_length: 1.0,
                bumps: vec![Bump {
                    x1: 0.0,
                    x2: 1.0,
                    rho_a: 0.2,
                    rho_b: 0.8,
                    gamma: 0.1,
                }],
            }],
            scale: 1,
        },
        _ => {
            let (cars, trucks, mult): (&[f64], &[f64], usize) = match name {
                ScenarioName::Tc => (&[1.0], &[0.0], 1),
                ScenarioName::Ct => (&[0.0], &[1.0], 1),
                _ => (&[1.0, 3.0, 5.0], &[0.0, 2.0, 4.0], 3),
            };
            let road = 2.0 * mult as f64;
            let [cb, tb] = car_truck_bumps(cars, trucks);
            Scenario {
                name,
                classes: vec![
                    ClassParams::new(1.0, 1.0, 1.0)?,
                    ClassParams::new(0.5, 2.0, 1.0)?,
                ],
                multiplicity: vec![mult, mult],
                road_length: road,
                horizon: HORIZON,
                specs: vec![
                    InitialDensitySpec {
                        road_length: road,
                        bumps: cb,
                    },
                    InitialDensitySpec {
                        road_length: road,
                        bumps: tb,
                    },
                ],
                scale: 1,
            }
        }
    };
    let s = if n == 1 { base } else { base.rescaled(n)? };
    s.validate()?;
    Ok(s)
}

impl Scenario {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.specs.len() || self.classes.len() != self.multiplicity.len() {
            return Err(invalid(
                "classes, specs and multiplicities must have equal length",
            ));
        }
        let total: f64 = self
            .classes
            .iter()
            .zip(&self.multiplicity)
            .map(|(c, &a)| a as f64 * c.section_length)
            .sum();
        if (total - self.road_length).abs() > 1e-12 * self.road_length {
            return Err(invalid(format!(
                "road length {} differs from sum of sections {}",
                self.road_length, total
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        for (c, s) in self.classes.iter().zip(&self.specs) {
            c.validate()?;
            if (s.road_length - self.road_length).abs() > 1e-12 * self.road_length {
                return Err(invalid("density spec road length mismatch"));
            }
            s.validate(c.rho_jam)?;
        }
        Ok(())
    }

    pub fn max_speeds(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.u_max).collect()
    }

    /// Per-class initial cell averages on `grid`.
    pub fn initial_density(&self, grid: &Grid) -> Vec<Vec<f64>> {
        self.specs.iter().map(|s| s.cell_averages(grid)).collect()
    }

    /// Vehicles per class at this scale, `N_j = alpha_j n`.
    pub fn vehicle_counts(&self) -> Vec<usize> {
        self.multiplicity.iter().map(|a| a * self.scale).collect()
    }

    /// Microscopic version with `L_j = n`.
    pub fn rescaled(&self, n: usize) -> Result<Self> {
        if self.scale != 1 {
            return Err(invalid("only a unit-scale scenario can be rescaled"));
        }
        let f = n as f64;
        let classes = self
            .classes
            .iter()
            .map(|c| ClassParams::new(c.u_max * f, c.vehicle_length, c.section_length * f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: self.name,
            classes,
            multiplicity: self.multiplicity.clone(),
            road_length: self.road_length * f,
            horizon: self.horizon,
            specs: self.specs.iter().map(|s| s.scaled(f, f)).collect(),
            scale: n,
        })
    }
}
