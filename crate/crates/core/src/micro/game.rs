//! Per-vehicle cost functionals and best responses against a frozen field.
//!
//! Controls are optimized in normalized form `a = v / u_max` on `[0, 1]`.
//! The discrete cost is
//! `J = sum_n dt f_j(u_max a_n, rho(t_n, x_n))`, `x_{n+1} = x_n + dt u_max a_n`,
//! and its gradient comes from the matching discrete adjoint, so it agrees
//! with finite differences of `J` to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kde::{gaussian, kernel_sums};
use super::MicroEnsemble;
use crate::cost::{CostModel, MAX_CLASSES};
use crate::error::{invalid, Error, Result};

/// Running cost with its control and density partials.
pub trait RunningCost: Sync {
    fn n_classes(&self) -> usize;
    /// `(f, df/dv, df/drho^m)`.
    fn eval(&self, j: usize, v: f64, rho: &[f64]) -> (f64, f64, [f64; MAX_CLASSES]);
}

impl RunningCost for CostModel {
    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    #[inline]
    fn eval(&self, j: usize, v: f64, rho: &[f64]) -> (f64, f64, [f64; MAX_CLASSES]) {
        let q = self.quadratic(j, rho);
        let mut d = [0.0; MAX_CLASSES];
        for (m, dm) in d.iter_mut().enumerate().take(rho.len()) {
            *dm = q.d_density(v, m);
        }
        (q.value(v), q.d_control(v), d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponseSettings {
    /// Initial step in normalized units.
    pub tau: f64,
    /// Projected-gradient sup-norm target.
    pub tol: f64,
    pub max_iters: usize,
    /// Stop once successive iterates differ by at most this much.
    pub step_tol: f64,
}

impl Default for BestResponseSettings {
    fn default() -> Self {
        Self {
            tau: 0.1,
            tol: 1e-4,
            max_iters: 500,
            step_tol: 1e-10,
        }
    }
}

impl BestResponseSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.tol > 0.0) || !(self.step_tol >= 0.0) {
            return Err(invalid("best-response tau and tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("best-response max_iters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    /// Speed series in physical units.
    pub v_bar: Vec<f64>,
    pub j_hat: f64,
    pub j_bar: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything one vehicle sees: the other vehicles frozen at their
/// constructed trajectories.
struct Frozen<'a, C: RunningCost + ?Sized> {
    ens: &'a MicroEnsemble,
    cost: &'a C,
    j: usize,
    i: usize,
}

impl<C: RunningCost + ?Sized> Frozen<'_, C> {
    /// Densities and their gradients at `x` on step `n`. The vehicle's own
    /// kernel is centred on itself, so it adds `K(0)` and no gradient.
    fn field(&self, n: usize, x: f64) -> ([f64; MAX_CLASSES], [f64; MAX_CLASSES]) {
        let e = self.ens;
        let mut rho = [0.0; MAX_CLASSES];
        let mut drho = [0.0; MAX_CLASSES];
        for m in 0..e.n_classes() {
            let pos = &e.snapshots[n][m];
            let s = e.sigma[m];
            let (mut k, dk) = if m == self.j {
                let (a, da) = kernel_sums(&pos[..self.i], s, e.road_length, x);
                let (b, db) = kernel_sums(&pos[self.i + 1..], s, e.road_length, x);
                (a + b, da + db)
            } else {
                kernel_sums(pos, s, e.road_length, x)
            };
            if m == self.j {
                k += gaussian(0.0);
            }
            let scale = e.mass[m] / (s * e.n_per_class[m] as f64);
            rho[m] = scale * k;
            drho[m] = scale * dk / s;
        }
        (rho, drho)
    }

    /// Cost of the normalized control `a` and, when requested, its discrete
    /// gradient.
    fn evaluate(&self, a: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let e = self.ens;
        let nc = e.n_classes();
        let u = e.u_max[self.j];
        let dt = e.dt;
        let mut x = e.snapshots[0][self.j][self.i];
        let mut total = 0.0;
        let want = grad.is_some();
        let mut dphi_dx = if want { vec![0.0; e.nt] } else { Vec::new() };
        let mut dphi_da = if want { vec![0.0; e.nt] } else { Vec::new() };
        for n in 0..e.nt {
            let (rho, drho) = self.field(n, x);
            let v = u * a[n];
            let (f, fv, fr) = self.cost.eval(self.j, v, &rho[..nc]);
            total += dt * f;
            if want {
                dphi_dx[n] = dt * (0..nc).map(|m| fr[m] * drho[m]).sum::<f64>();
                dphi_da[n] = dt * u * fv;
            }
            x = (x + dt * v).rem_euclid(e.road_length);
        }
        if let Some(g) = grad {
            let mut p = 0.0;
            for n in (0..e.nt).rev() {
                g[n] = dphi_da[n] + dt * u * p;
                p += dphi_dx[n];
            }
        }
        total
    }
}

fn check_vehicle<C: RunningCost + ?Sized>(
    ens: &MicroEnsemble,
    cost: &C,
    j: usize,
    i: usize,
    len: usize,
) -> Result<()> {
    if cost.n_classes() != ens.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_classes(),
            got: cost.n_classes(),
        });
    }
    if j >= ens.n_classes() || i >= ens.n_per_class[j] {
        return Err(invalid(format!("no vehicle {i} in class {j}")));
    }
    if len != ens.nt {
        return Err(Error::DimensionMismatch {
            expected: ens.nt,
            got: len,
        });
    }
    Ok(())
}

/// `J` for vehicle `i` of class `j` driving the speed series `v` while every
/// other vehicle follows its constructed control.
pub fn vehicle_cost<C: RunningCost + ?Sized>(
    ens: &MicroEnsemble,
    cost: &C,
    j: usize,
    i: usize,
    v: &[f64],
) -> Result<f64> {
    check_vehicle(ens, cost, j, i, v.len())?;
    let u = ens.u_max[j];
    let a: Vec<f64> = v.iter().map(|x| x / u).collect();
    Ok(Frozen { ens, cost, j, i }.evaluate(&a, None))
}

/// `J` and `dJ/dv_n` in physical speed units.
pub fn cost_gradient<C: RunningCost + ?Sized>(
    ens: &MicroEnsemble,
    cost: &C,
    j: usize,
    i: usize,
    v: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_vehicle(ens, cost, j, i, v.len())?;
    let u = ens.u_max[j];
    let a: Vec<f64> = v.iter().map(|x| x / u).collect();
    let mut g = vec![0.0; ens.nt];
    let val = Frozen { ens, cost, j, i }.evaluate(&a, Some(&mut g));
    for gn in g.iter_mut() {
        *gn /= u;
    }
    Ok((val, g))
}

/// Projected gradient descent from the constructed control. A trial step is
/// kept only if it lowers the cost; otherwise the step is halved.
pub fn best_response<C: RunningCost + ?Sized>(
    ens: &MicroEnsemble,
    cost: &C,
    j: usize,
    i: usize,
    settings: &BestResponseSettings,
) -> Result<BestResponse> {
    settings.validate()?;
    check_vehicle(
        ens,
        cost,
        j,
        i,
        ens.v_hat
            .get(j)
            .and_then(|c| c.get(i))
            .map_or(0, |v| v.len()),
    )?;
    let frozen = Frozen { ens, cost, j, i };
    let u = ens.u_max[j];
    let dt = ens.dt;
    let mut a: Vec<f64> = ens.v_hat[j][i]
        .iter()
        .map(|v| (v / u).clamp(0.0, 1.0))
        .collect();
    let mut g = vec![0.0; ens.nt];
    let j_hat = frozen.evaluate(&a, Some(&mut g));
    let mut val = j_hat;
    let mut tau = settings.tau;
    let mut trial = vec![0.0; ens.nt];
    let mut g_trial = vec![0.0; ens.nt];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        let pg = a
            .iter()
            .zip(&g)
            .map(|(ak, gk)| (ak - (ak - gk / dt).clamp(0.0, 1.0)).abs())
            .fold(0.0, f64::max);
        if pg <= settings.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut change = 0.0f64;
        for k in 0..ens.nt {
            trial[k] = (a[k] - tau * g[k] / dt).clamp(0.0, 1.0);
            change = change.max((trial[k] - a[k]).abs());
        }
        if change <= settings.step_tol {
            converged = true;
            break;
        }
        let tv = frozen.evaluate(&trial, Some(&mut g_trial));
        if tv.is_finite() && tv <= val {
            std::mem::swap(&mut a, &mut trial);
            std::mem::swap(&mut g, &mut g_trial);
            val = tv;
        } else {
            tau *= 0.5;
        }
    }
    if !val.is_finite() {
        return Err(Error::Propagation {
            class: j,
            vehicle: i,
            step: 0,
        });
    }
    Ok(BestResponse {
        v_bar: a.iter().map(|x| x * u).collect(),
        j_hat,
        j_bar: val,
        iterations,
        converged,
    })
}

/// Best responses for every vehicle, in parallel. Fills `v_bar`, the costs,
/// the gaps and the convergence flags of `ens`.
pub fn run_best_responses<C: RunningCost + ?Sized>(
    ens: &mut MicroEnsemble,
    cost: &C,
    settings: &BestResponseSettings,
) -> Result<()> {
    let jobs: Vec<(usize, usize)> = (0..ens.n_classes())
        .flat_map(|j| (0..ens.n_per_class[j]).map(move |i| (j, i)))
        .collect();
    let frozen: &MicroEnsemble = ens;
    let out: Vec<BestResponse> = jobs
        .par_iter()
        .map(|&(j, i)| best_response(frozen, cost, j, i, settings))
        .collect::<Result<_>>()?;
    let nc = ens.n_classes();
    ens.v_bar = ens
        .n_per_class
        .iter()
        .map(|&c| Vec::with_capacity(c))
        .collect();
    ens.j_hat = vec![Vec::new(); nc];
    ens.j_bar = vec![Vec::new(); nc];
    ens.eps = vec![Vec::new(); nc];
    ens.converged = vec![Vec::new(); nc];
    for ((j, _), br) in jobs.into_iter().zip(out) {
        ens.j_hat[j].push(br.j_hat);
        ens.j_bar[j].push(br.j_bar);
        ens.eps[j].push(br.j_hat - br.j_bar);
        ens.converged[j].push(br.converged);
        ens.v_bar[j].push(br.v_bar);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostKind;
    use crate::grid::Grid;
    use crate::micro::{constructed_controls, sample_initial_positions, KdeSettings};
    use crate::residual::{Field, SolverState, UnknownLayout};
    use crate::scenario::{build_scenario, ScenarioName};

    /// `f = (v - v0)^2 / 2`, no density coupling.
    struct Target(f64);

    impl RunningCost for Target {
        fn n_classes(&self) -> usize {
            2
        }
        fn eval(&self, _j: usize, v: f64, _rho: &[f64]) -> (f64, f64, [f64; MAX_CLASSES]) {
            (0.5 * (v - self.0).powi(2), v - self.0, [0.0; MAX_CLASSES])
        }
    }

    struct Constant(f64);

    impl RunningCost for Constant {
        fn n_classes(&self) -> usize {
            2
        }
        fn eval(&self, _j: usize, _v: f64, _rho: &[f64]) -> (f64, f64, [f64; MAX_CLASSES]) {
            (self.0, 0.0, [0.0; MAX_CLASSES])
        }
    }

    fn ensemble(n: usize, speed: f64) -> (MicroEnsemble, CostModel) {
        let macro_sc = build_scenario(ScenarioName::Tc, 1).unwrap();
        let micro = macro_sc.rescaled(n).unwrap();
        let g = Grid::new(2.0, 3.0, 30, 60).unwrap();
        let lay = UnknownLayout::for_grid(&g, 2);
        let mut s = SolverState::zeros(lay);
        for j in 0..2 {
            for t in 0..g.nt {
                let f = s.field_mut(Field::U, j, t);
                for (k, v) in f.iter_mut().enumerate() {
                    *v = speed * (1.0 + 0.3 * (k as f64 * 0.4).sin());
                }
            }
        }
        let x0 = sample_initial_positions(&micro, 7).unwrap();
        let e = constructed_controls(&s, &g, &micro, x0, &KdeSettings::default()).unwrap();
        let model = CostModel::new(CostKind::Gs, micro.classes.clone()).unwrap();
        (e, model)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (e, model) = ensemble(10, 0.4);
        let v = e.v_hat[0][3].clone();
        let (_, g) = cost_gradient(&e, &model, 0, 3, &v).unwrap();
        let h = 1e-6;
        for k in [0, 7, 30, 59] {
            let mut p = v.clone();
            p[k] += h;
            let mut m = v.clone();
            m[k] -= h;
            let fd = (vehicle_cost(&e, &model, 0, 3, &p).unwrap()
                - vehicle_cost(&e, &model, 0, 3, &m).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3),
                "k={k} fd={fd} adj={}",
                g[k]
            );
        }
    }

    #[test]
    fn quadratic_target_recovered() {
        let (e, _) = ensemble(10, 0.2);
        let v0 = 0.5 * e.u_max[0];
        let s = BestResponseSettings {
            tol: 1e-9,
            max_iters: 5000,
            ..Default::default()
        };
        let br = best_response(&e, &Target(v0), 0, 1, &s).unwrap();
        assert!(br.converged);
        assert!(br.v_bar.iter().all(|v| (v - v0).abs() < 1e-6));
        assert!(br.j_bar < 1e-10);
    }

    #[test]
    fn constant_cost_leaves_control_alone() {
        let (e, _) = ensemble(10, 0.3);
        let br = best_response(&e, &Constant(2.0), 1, 0, &BestResponseSettings::default()).unwrap();
        assert_eq!(br.iterations, 0);
        assert_eq!(br.j_hat, br.j_bar);
        assert!((br.j_bar - 2.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn best_response_never_increases_cost() {
        let (mut e, model) = ensemble(10, 0.4);
        run_best_responses(&mut e, &model, &BestResponseSettings::default()).unwrap();
        for j in 0..2 {
            assert_eq!(e.eps[j].len(), e.n_per_class[j]);
            assert!(e.eps[j].iter().all(|&x| x >= 0.0));
            for (i, vb) in e.v_bar[j].iter().enumerate() {
                let again = vehicle_cost(&e, &model, j, i, vb).unwrap();
                assert!((again - e.j_bar[j][i]).abs() < 1e-9 * again.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_vehicle_and_length() {
        let (e, model) = ensemble(10, 0.4);
        assert!(vehicle_cost(&e, &model, 0, 99, &e.v_hat[0][0]).is_err());
        assert!(vehicle_cost(&e, &model, 0, 0, &[0.0; 3]).is_err());
    }
}
