//! Inverse-CDF sampling of initial vehicle positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::scenario::{InitialDensitySpec, Scenario};

/// Points in the tabulated CDF.
pub const CDF_POINTS: usize = 10_000;

/// Tabulated CDF on `[0, L]`. Bump edges are inserted as extra nodes and each
/// segment uses its midpoint density, so segments outside the support carry
/// no mass and samples stay inside it.
pub struct CdfTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfTable {
    pub fn new(spec: &InitialDensitySpec) -> Result<Self> {
        let l = spec.road_length;
        let mut nodes: Vec<f64> = (0..CDF_POINTS)
            .map(|i| l * i as f64 / (CDF_POINTS - 1) as f64)
            .collect();
        nodes.extend(spec.bumps.iter().flat_map(|b| [b.x1, b.x2]));
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let mut cdf = Vec::with_capacity(nodes.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            acc += spec.density_at(0.5 * (w[0] + w[1])) * (w[1] - w[0]);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(invalid("initial density has zero mass"));
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Ok(Self { nodes, cdf })
    }

    /// Position with CDF value `u` in `(0, 1)`.
    pub fn invert(&self, u: f64) -> f64 {
        // first segment whose upper CDF value reaches u
        let i = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[i - 1] + t * (self.nodes[i] - self.nodes[i - 1])
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        let i = self
            .nodes
            .partition_point(|&n| n <= x)
            .clamp(1, self.nodes.len() - 1);
        let (x0, x1) = (self.nodes[i - 1], self.nodes[i]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1])
    }
}

/// `N_j` positions per class drawn from the class's initial density. Class
/// `j` uses stream `j` of a ChaCha generator seeded with `seed`, so classes
/// are independent and results do not depend on the class order.
pub fn sample_initial_positions(scenario: &Scenario, seed: u64) -> Result<Vec<Vec<f64>>> {
    let counts = scenario.vehicle_counts();
    scenario
        .specs
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (spec, n))| sample_spec(spec, n, seed, j as u64))
        .collect()
}

pub fn sample_spec(
    spec: &InitialDensitySpec,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let table = CdfTable::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let l = spec.road_length;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let x = table.invert(u);
            if x >= l {
                x - l
            } else {
                x
            }
        })
        .collect())
}
