//! Running costs, Hamiltonians and optimal-velocity maps.
//!
//! Every supported running cost is a strictly convex quadratic in the control
//! `a` with density-dependent coefficients,
//!
//! ```text
//! f_j(a, rho) = 1/2 c2 a^2 + c1(rho) a + c0(rho),   c2 > 0,
//! ```
//!
//! so the Hamiltonian `H_j(p, rho) = min_{0 <= a <= u_max} f_j(a, rho) + a p`
//! has a closed form: clamp the stationary point `-(c1 + p) / c2` to the
//! admissible interval and evaluate there.
//!
//! Density enters through two scale-free ratios: the occupancy
//! `s = sum_m rho^m / rho^m_jam` (desired speed of the generalized LWR model)
//! and the aggregate `R = sum_m rho^m l_m / sum_m L_m` used by the separable
//! and non-separable costs. Both reduce to the usual one-class ratio
//! `rho / rho_jam` and stay invariant when a scenario is rescaled to a
//! microscopic road with `L_j = n`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Classes supported by the closed-form evaluators.
pub const MAX_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub u_max: f64,
    pub rho_jam: f64,
    pub vehicle_length: f64,
    pub section_length: f64,
}

impl ClassParams {
    /// Derives the jam density from `rho_jam = L_j / l_j`.
    pub fn new(u_max: f64, vehicle_length: f64, section_length: f64) -> Result<Self> {
        let p = Self {
            u_max,
            rho_jam: section_length / vehicle_length,
            vehicle_length,
            section_length,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("u_max", self.u_max),
            ("rho_jam", self.rho_jam),
            ("vehicle_length", self.vehicle_length),
            ("section_length", self.section_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let expected = self.section_length / self.vehicle_length;
        if (self.rho_jam - expected).abs() > 1e-12 * expected {
            return Err(invalid(format!(
                "rho_jam {} inconsistent with L/l = {}",
                self.rho_jam, expected
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// Generalized Lighthill-Whitham-Richards (two classes).
    Glwr,
    /// Generalized separable (two classes).
    Gs,
    /// Generalized non-separable (two classes).
    Gns,
    Lwr1,
    Sep1,
    Nonsep1,
}

impl CostKind {
    pub fn n_classes(self) -> usize {
        match self {
            CostKind::Glwr | CostKind::Gs | CostKind::Gns => 2,
            CostKind::Lwr1 | CostKind::Sep1 | CostKind::Nonsep1 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Glwr => "glwr",
            CostKind::Gs => "gs",
            CostKind::Gns => "gns",
            CostKind::Lwr1 => "lwr1",
            CostKind::Sep1 => "sep1",
            CostKind::Nonsep1 => "nonsep1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "glwr" => CostKind::Glwr,
            "gs" => CostKind::Gs,
            "gns" => CostKind::Gns,
            "lwr1" | "lwr" => CostKind::Lwr1,
            "sep1" | "separable" => CostKind::Sep1,
            "nonsep1" | "non-separable" | "nonseparable" => CostKind::Nonsep1,
            other => return Err(invalid(format!("unknown cost kind '{other}'"))),
        })
    }

    /// Same functional family for a given class count.
    pub fn family(self) -> Family {
        match self {
            CostKind::Glwr | CostKind::Lwr1 => Family::Lwr,
            CostKind::Gs | CostKind::Sep1 => Family::Separable,
            CostKind::Gns | CostKind::Nonsep1 => Family::NonSeparable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Lwr,
    Separable,
    NonSeparable,
}

/// Coefficients of `f_j` as a quadratic in the control, with their density
/// partials.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Quadratic {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub dc1: [f64; MAX_CLASSES],
    pub dc0: [f64; MAX_CLASSES],
}

impl Quadratic {
    #[inline]
    pub fn value(&self, a: f64) -> f64 {
        0.5 * self.c2 * a * a + self.c1 * a + self.c0
    }

    #[inline]
    pub fn d_control(&self, a: f64) -> f64 {
        self.c2 * a + self.c1
    }

    #[inline]
    pub fn d_density(&self, a: f64, m: usize) -> f64 {
        self.dc1[m] * a + self.dc0[m]
    }
}

/// Closed-form Hamiltonian together with the partials the Jacobian needs.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianEval {
    pub value: f64,
    /// Clamped minimizer, i.e. the optimal velocity.
    pub argmin: f64,
    /// `dH/dp`, equal to the argmin by the envelope theorem.
    pub dvalue_dp: f64,
    pub dvalue_drho: [f64; MAX_CLASSES],
    pub dargmin_dp: f64,
    pub dargmin_drho: [f64; MAX_CLASSES],
    /// True when the stationary point lies outside `[0, u_max]`.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostKind,
    pub classes: Vec<ClassParams>,
}

impl CostModel {
    pub fn new(kind: CostKind, classes: Vec<ClassParams>) -> Result<Self> {
        if classes.len() != kind.n_classes() {
            return Err(invalid(format!(
                "{} expects {} class(es), got {}",
                kind.name(),
                kind.n_classes(),
                classes.len()
            )));
        }
        for c in &classes {
            c.validate()?;
        }
        Ok(Self { kind, classes })
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Final-position preference; zero everywhere.
    pub fn terminal_cost(&self, _x: f64) -> f64 {
        0.0
    }

    fn check(&self, j: usize, rho: &[f64]) -> Result<()> {
        if j >= self.classes.len() {
            return Err(invalid(format!(
                "class index {j} out of range for {} class(es)",
                self.classes.len()
            )));
        }
        if rho.len() != self.classes.len() {
            return Err(invalid(format!(
                "expected {} densities, got {}",
                self.classes.len(),
                rho.len()
            )));
        }
        Ok(())
    }

    /// Occupancy `s = sum_m rho^m / rho^m_jam`.
    pub fn occupancy(&self, rho: &[f64]) -> f64 {
        self.classes
            .iter()
            .zip(rho)
            .map(|(c, r)| r / c.rho_jam)
            .sum()
    }

    /// Greenshields-type desired speed `U_j = u_max^j (1 - s)`.
    pub fn desired_speed(&self, j: usize, rho: &[f64]) -> f64 {
        self.classes[j].u_max * (1.0 - self.occupancy(rho))
    }

    fn aggregate_ratio(&self, rho: &[f64]) -> (f64, [f64; MAX_CLASSES]) {
        let total_section: f64 = self.classes.iter().map(|c| c.section_length).sum();
        let mut d = [0.0; MAX_CLASSES];
        let mut r = 0.0;
        for (m, c) in self.classes.iter().enumerate() {
            d[m] = c.vehicle_length / total_section;
            r += rho[m] * d[m];
        }
        (r, d)
    }

    #[inline]
    pub(crate) fn quadratic(&self, j: usize, rho: &[f64]) -> Quadratic {
        let um = self.classes[j].u_max;
        let mut dc1 = [0.0; MAX_CLASSES];
        let mut dc0 = [0.0; MAX_CLASSES];
        match self.kind.family() {
            Family::Lwr => {
                let u = self.desired_speed(j, rho);
                for (m, c) in self.classes.iter().enumerate() {
                    let du = -um / c.rho_jam;
                    dc1[m] = -du;
                    dc0[m] = u * du;
                }
                Quadratic {
                    c2: 1.0,
                    c1: -u,
                    c0: 0.5 * u * u,
                    dc1,
                    dc0,
                }
            }
            Family::Separable => {
                let (r, dr) = self.aggregate_ratio(rho);
                dc0[..self.classes.len()].copy_from_slice(&dr[..self.classes.len()]);
                Quadratic {
                    c2: 1.0 / (um * um),
                    c1: -1.0 / um,
                    c0: r,
                    dc1,
                    dc0,
                }
            }
            Family::NonSeparable => {
                let (r, dr) = self.aggregate_ratio(rho);
                for m in 0..self.classes.len() {
                    dc1[m] = dr[m] / um;
                }
                Quadratic {
                    c2: 1.0 / (um * um),
                    c1: (r - 1.0) / um,
                    c0: 0.0,
                    dc1,
                    dc0,
                }
            }
        }
    }

    /// Full Hamiltonian evaluation; `j` and `rho` are trusted.
    #[inline]
    pub fn hamiltonian_eval(&self, j: usize, p: f64, rho: &[f64]) -> HamiltonianEval {
        let q = self.quadratic(j, rho);
        let um = self.classes[j].u_max;
        let free = -(q.c1 + p) / q.c2;
        // The interior derivative is kept on the clamp boundary itself.
        let clamped = !(0.0..=um).contains(&free);
        let a = free.clamp(0.0, um);
        let n = self.classes.len();
        let mut dvalue_drho = [0.0; MAX_CLASSES];
        let mut dargmin_drho = [0.0; MAX_CLASSES];
        for m in 0..n {
            dvalue_drho[m] = q.d_density(a, m);
            if !clamped {
                dargmin_drho[m] = -q.dc1[m] / q.c2;
            }
        }
        HamiltonianEval {
            value: q.value(a) + a * p,
            argmin: a,
            dvalue_dp: a,
            dvalue_drho,
            dargmin_dp: if clamped { 0.0 } else { -1.0 / q.c2 },
            dargmin_drho,
            clamped,
        }
    }

    /// `f_j(u, rho)`.
    pub fn running_cost(&self, j: usize, u: f64, rho: &[f64]) -> Result<f64> {
        self.check(j, rho)?;
        Ok(self.quadratic(j, rho).value(u))
    }

    /// `H_j(p, rho) = min_{0 <= a <= u_max} f_j(a, rho) + a p`.
    pub fn hamiltonian(&self, j: usize, p: f64, rho: &[f64]) -> Result<f64> {
        self.check(j, rho)?;
        Ok(self.hamiltonian_eval(j, p, rho).value)
    }

    /// Minimizer of the Hamiltonian problem, projected onto `[0, u_max]`.
    pub fn optimal_velocity(&self, j: usize, p: f64, rho: &[f64]) -> Result<f64> {
        self.check(j, rho)?;
        Ok(self.hamiltonian_eval(j, p, rho).argmin)
    }

    /// `df_j/du`.
    pub fn running_cost_grad_u(&self, j: usize, u: f64, rho: &[f64]) -> Result<f64> {
        self.check(j, rho)?;
        Ok(self.quadratic(j, rho).d_control(u))
    }

    /// Chain rule `sum_m (df_j/drho^m) (drho^m/dx)`.
    pub fn running_cost_grad_x(
        &self,
        j: usize,
        u: f64,
        rho: &[f64],
        drho_dx: &[f64],
    ) -> Result<f64> {
        self.check(j, rho)?;
        if drho_dx.len() != rho.len() {
            return Err(invalid("density gradient length mismatch"));
        }
        let q = self.quadratic(j, rho);
        Ok((0..rho.len()).map(|m| q.d_density(u, m) * drho_dx[m]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_class(kind: CostKind) -> CostModel {
        CostModel::new(
            kind,
            vec![
                ClassParams::new(1.0, 1.0, 1.0).unwrap(),
                ClassParams::new(0.5, 2.0, 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    fn one_class(kind: CostKind) -> CostModel {
        CostModel::new(kind, vec![ClassParams::new(1.0, 1.0, 1.0).unwrap()]).unwrap()
    }

    fn model(kind: CostKind) -> CostModel {
        if kind.n_classes() == 2 {
            two_class(kind)
        } else {
            one_class(kind)
        }
    }

    const KINDS: [CostKind; 6] = [
        CostKind::Glwr,
        CostKind::Gs,
        CostKind::Gns,
        CostKind::Lwr1,
        CostKind::Sep1,
        CostKind::Nonsep1,
    ];

    /// Independent evaluation of each running cost straight from its
    /// defining formula (no quadratic-coefficient route).
    fn f_direct(m: &CostModel, j: usize, u: f64, rho: &[f64]) -> f64 {
        let c = &m.classes;
        let um = c[j].u_max;
        let a = u / um;
        match m.kind.family() {
            Family::Lwr => {
                let s: f64 = rho
                    .iter()
                    .zip(c)
                    .map(|(r, p)| r * p.vehicle_length / p.section_length)
                    .sum();
                let desired = um * (1.0 - s);
                0.5 * (desired - u).powi(2)
            }
            Family::Separable | Family::NonSeparable => {
                let num: f64 = rho.iter().zip(c).map(|(r, p)| r * p.vehicle_length).sum();
                let den: f64 = c.iter().map(|p| p.rho_jam * p.vehicle_length).sum();
                let ratio = num / den;
                if m.kind.family() == Family::Separable {
                    0.5 * a * a - a + ratio
                } else {
                    0.5 * a * a - a + a * ratio
                }
            }
        }
    }

    #[test]
    fn class_params_consistency() {
        assert!(ClassParams::new(1.0, 2.0, 1.0).unwrap().rho_jam == 0.5);
        let bad = ClassParams {
            u_max: 1.0,
            rho_jam: 0.7,
            vehicle_length: 2.0,
            section_length: 1.0,
        };
        assert!(bad.validate().is_err());
        assert!(ClassParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn model_class_count_checked() {
        let c = ClassParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(CostModel::new(CostKind::Gs, vec![c]).is_err());
        assert!(CostModel::new(CostKind::Sep1, vec![c, c]).is_err());
    }

    #[test]
    fn running_cost_examples() {
        let glwr = two_class(CostKind::Glwr);
        assert_eq!(glwr.running_cost(0, 1.0, &[0.0, 0.0]).unwrap(), 0.0);
        let gs = two_class(CostKind::Gs);
        assert!((gs.running_cost(0, 1.0, &[0.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
        // a = 0.25 / 0.5; R = (0.5 * 1 + 0.25 * 2) / 2 = 1/2
        // 1/2 (1/2)^2 - 1/2 + (1/2)(1/2) = -0.125
        let gns = two_class(CostKind::Gns);
        let v = gns.running_cost(1, 0.25, &[0.5, 0.25]).unwrap();
        assert!((v - f_direct(&gns, 1, 0.25, &[0.5, 0.25])).abs() < 1e-15);
        assert!((v + 0.125).abs() < 1e-15);
        assert!(glwr.running_cost(2, 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn quadratic_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in KINDS {
            let m = model(kind);
            for _ in 0..200 {
                let j = rng.random_range(0..m.n_classes());
                let rho: Vec<f64> = m
                    .classes
                    .iter()
                    .map(|c| rng.random_range(0.0..c.rho_jam))
                    .collect();
                let u = rng.random_range(-0.5..1.5);
                let lhs = m.running_cost(j, u, &rho).unwrap();
                let rhs = f_direct(&m, j, u, &rho);
                assert!((lhs - rhs).abs() < 1e-13, "{kind:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let glwr = two_class(CostKind::Glwr);
        assert_eq!(glwr.hamiltonian(0, 0.0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(glwr.optimal_velocity(0, 0.0, &[0.0, 0.0]).unwrap(), 1.0);
        let gs = two_class(CostKind::Gs);
        assert!((gs.hamiltonian(0, 0.0, &[0.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(gs.optimal_velocity(0, 2.0, &[0.0, 0.0]).unwrap(), 0.0);
        let gns = two_class(CostKind::Gns);
        assert_eq!(gns.optimal_velocity(1, 0.0, &[1.0, 0.5]).unwrap(), 0.0);
    }

    fn brute_force(m: &CostModel, j: usize, p: f64, rho: &[f64], samples: usize) -> (f64, f64) {
        let um = m.classes[j].u_max;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..samples {
            let a = um * i as f64 / (samples - 1) as f64;
            let v = f_direct(m, j, a, rho) + a * p;
            if v < best.0 {
                best = (v, a);
            }
        }
        best
    }

    #[test]
    fn glwr_hamiltonian_matches_grid_search() {
        let glwr = two_class(CostKind::Glwr);
        let (v, a) = brute_force(&glwr, 0, 0.3, &[0.2, 0.1], 1_000_001);
        assert!((glwr.hamiltonian(0, 0.3, &[0.2, 0.1]).unwrap() - v).abs() < 1e-6);
        assert!((glwr.optimal_velocity(0, 0.3, &[0.2, 0.1]).unwrap() - a).abs() < 1e-5);
    }

    #[test]
    fn hamiltonian_oracle_small_sweep() {
        // The 1000-draw version lives in the acceptance suite.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in KINDS {
            let m = model(kind);
            for _ in 0..20 {
                let j = rng.random_range(0..m.n_classes());
                let p = rng.random_range(-3.0..3.0);
                let rho: Vec<f64> = m
                    .classes
                    .iter()
                    .map(|c| rng.random_range(0.0..=c.rho_jam))
                    .collect();
                let (v, a) = brute_force(&m, j, p, &rho, 100_001);
                let h = m.hamiltonian_eval(j, p, &rho);
                assert!((h.value - v).abs() < 1e-6, "{kind:?}");
                assert!((h.argmin - a).abs() < 1e-4, "{kind:?}");
            }
        }
    }

    #[test]
    fn argmin_within_bounds_and_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in KINDS {
            let m = model(kind);
            for _ in 0..500 {
                let j = rng.random_range(0..m.n_classes());
                let p = rng.random_range(-5.0..5.0);
                let rho: Vec<f64> = m
                    .classes
                    .iter()
                    .map(|c| rng.random_range(0.0..1.2 * c.rho_jam))
                    .collect();
                let h = m.hamiltonian_eval(j, p, &rho);
                assert!(h.argmin >= 0.0 && h.argmin <= m.classes[j].u_max);
                // dH/dp by central differences equals the argmin away from kinks.
                let e = 1e-6;
                let fd = (m.hamiltonian(j, p + e, &rho).unwrap()
                    - m.hamiltonian(j, p - e, &rho).unwrap())
                    / (2.0 * e);
                assert!(
                    (fd - h.argmin).abs() < 1e-6,
                    "{kind:?}: {fd} vs {}",
                    h.argmin
                );
            }
        }
    }

    #[test]
    fn hamiltonian_density_partials_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in KINDS {
            let m = model(kind);
            for _ in 0..200 {
                let j = rng.random_range(0..m.n_classes());
                let p = rng.random_range(-2.0..2.0);
                let rho: Vec<f64> = m
                    .classes
                    .iter()
                    .map(|c| rng.random_range(0.05..0.95) * c.rho_jam)
                    .collect();
                let h = m.hamiltonian_eval(j, p, &rho);
                for mm in 0..m.n_classes() {
                    let e = 1e-6;
                    let mut rp = rho.clone();
                    let mut rm = rho.clone();
                    rp[mm] += e;
                    rm[mm] -= e;
                    let hp = m.hamiltonian_eval(j, p, &rp);
                    let hm = m.hamiltonian_eval(j, p, &rm);
                    if hp.clamped != h.clamped || hm.clamped != h.clamped {
                        continue;
                    }
                    let fd_v = (hp.value - hm.value) / (2.0 * e);
                    let fd_a = (hp.argmin - hm.argmin) / (2.0 * e);
                    assert!((fd_v - h.dvalue_drho[mm]).abs() < 1e-6);
                    assert!((fd_a - h.dargmin_drho[mm]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn hamiltonian_concave_and_nondecreasing_in_p() {
        for kind in KINDS {
            let m = model(kind);
            let rho: Vec<f64> = m.classes.iter().map(|c| 0.3 * c.rho_jam).collect();
            let ps: Vec<f64> = (0..100).map(|i| -3.0 + 6.0 * i as f64 / 99.0).collect();
            let hs: Vec<f64> = ps
                .iter()
                .map(|&p| m.hamiltonian(0, p, &rho).unwrap())
                .collect();
            for w in hs.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-8, "{kind:?}");
            }
            for w in hs.windows(2) {
                assert!(w[1] - w[0] >= -1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn grad_x_examples() {
        let gs = two_class(CostKind::Gs);
        assert_eq!(
            gs.running_cost_grad_x(0, 0.7, &[0.3, 0.1], &[0.0, 0.0])
                .unwrap(),
            0.0
        );
        let g = gs
            .running_cost_grad_x(0, 0.7, &[0.3, 0.1], &[2.0, 0.0])
            .unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let glwr = two_class(CostKind::Glwr);
        let rho = [0.3, 0.1];
        let u = glwr.desired_speed(0, &rho);
        assert!(
            glwr.running_cost_grad_x(0, u, &rho, &[1.3, -0.4])
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn grad_x_matches_fd_through_smooth_profile() {
        // rho^m(x) smooth synthetic profiles; compare d/dx f(u, rho(x)).
        let profile = |x: f64| [0.4 + 0.3 * (2.0 * x).sin(), 0.2 + 0.1 * (3.0 * x).cos()];
        let dprofile = |x: f64| [0.6 * (2.0 * x).cos(), -0.3 * (3.0 * x).sin()];
        for kind in [CostKind::Glwr, CostKind::Gs, CostKind::Gns] {
            let m = two_class(kind);
            for j in 0..2 {
                for i in 0..50 {
                    let x = 0.1 + i as f64 * 0.037;
                    let u = 0.2 + 0.01 * i as f64;
                    let h = 1e-5;
                    let fd = (m.running_cost(j, u, &profile(x + h)).unwrap()
                        - m.running_cost(j, u, &profile(x - h)).unwrap())
                        / (2.0 * h);
                    let an = m
                        .running_cost_grad_x(j, u, &profile(x), &dprofile(x))
                        .unwrap();
                    let scale = an.abs().max(1e-3);
                    assert!(
                        (fd - an).abs() / scale < 1e-6,
                        "{kind:?} j={j}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn fundamental_diagram_requirements() {
        let m = two_class(CostKind::Glwr);
        for j in 0..2 {
            let um = m.classes[j].u_max;
            // free-flow speed
            assert_eq!(m.desired_speed(j, &[0.0, 0.0]), um);
            // zero speed at each pure-class jam
            assert!(m.desired_speed(j, &[1.0, 0.0]).abs() < 1e-15);
            assert!(m.desired_speed(j, &[0.0, 0.5]).abs() < 1e-15);
            for a in 0..=20 {
                for b in 0..=20 {
                    let rho = [a as f64 / 20.0, b as f64 / 40.0];
                    if m.occupancy(&rho) > 1.0 {
                        continue;
                    }
                    let u = m.desired_speed(j, &rho);
                    // bounded speed
                    assert!((0.0..=um + 1e-15).contains(&u));
                }
            }
            // class flow strictly concave in its own density
            let jam = m.classes[j].rho_jam;
            for other in [0.0, 0.1] {
                let flow = |r: f64| {
                    let mut rho = [0.0; 2];
                    rho[j] = r;
                    rho[1 - j] = other;
                    r * m.desired_speed(j, &rho)
                };
                let h = jam / 100.0;
                for i in 1..60 {
                    let r = i as f64 * h;
                    assert!(flow(r - h) - 2.0 * flow(r) + flow(r + h) < 0.0);
                }
            }
        }
    }
}
