//! Relative epsilon-Nash accuracies and their decay rates.

use serde::{Deserialize, Serialize};

use super::MicroEnsemble;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_vehicles: usize,
    pub max_ra: f64,
    pub mean_ra: f64,
    /// Largest `||v_hat - v_bar||_inf / u_max` over vehicles.
    pub e_v_max: f64,
    /// Average of the same quantity.
    pub e_v_mean: f64,
    /// Smallest gap; negative values mean the optimizer lost ground.
    pub min_eps: f64,
    /// Vehicles whose best response hit the iteration cap.
    pub unconverged: usize,
}

/// `MaxRA = max|eps| / max|J_hat|`, `MeanRA = sum|eps| / sum|J_hat|`.
pub fn epsilon_report(ens: &MicroEnsemble) -> Result<AccuracyReport> {
    if !ens.has_best_responses() {
        return Err(invalid("best responses have not been computed"));
    }
    let eps: Vec<f64> = ens.eps.iter().flatten().copied().collect();
    let jh: Vec<f64> = ens.j_hat.iter().flatten().copied().collect();
    if eps.is_empty() {
        return Err(Error::UndefinedMetric("no vehicles".into()));
    }
    let max_j = jh.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sum_j: f64 = jh.iter().map(|x| x.abs()).sum();
    if max_j == 0.0 || sum_j == 0.0 {
        return Err(Error::UndefinedMetric(
            "all constructed-control costs are zero".into(),
        ));
    }
    let gaps: Vec<f64> = ens.speed_gaps().into_iter().flatten().collect();
    Ok(AccuracyReport {
        n_vehicles: eps.len(),
        max_ra: eps.iter().fold(0.0f64, |m, x| m.max(x.abs())) / max_j,
        mean_ra: eps.iter().map(|x| x.abs()).sum::<f64>() / sum_j,
        e_v_max: gaps.iter().copied().fold(0.0, f64::max),
        e_v_mean: gaps.iter().sum::<f64>() / gaps.len() as f64,
        min_eps: eps.iter().copied().fold(f64::INFINITY, f64::min),
        unconverged: ens.converged.iter().flatten().filter(|c| !**c).count(),
    })
}

/// Negated least-squares slopes of `log MaxRA` and `log MeanRA` against
/// `log N`, returned as `(mu, eta)`.
pub fn fit_slopes(n: &[usize], max_ra: &[f64], mean_ra: &[f64]) -> Result<(f64, f64)> {
    if n.len() < 3 || n.len() != max_ra.len() || n.len() != mean_ra.len() {
        return Err(invalid("slope fit needs at least three matching points"));
    }
    let x: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let slope = |y: &[f64]| -> Result<f64> {
        if y.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("slope fit needs positive accuracies"));
        }
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let k = x.len() as f64;
        let mx = x.iter().sum::<f64>() / k;
        let my = ly.iter().sum::<f64>() / k;
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::UndefinedMetric("all N values coincide".into()));
        }
        let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        Ok(-sxy / sxx)
    };
    Ok((slope(max_ra)?, slope(mean_ra)?))
}
