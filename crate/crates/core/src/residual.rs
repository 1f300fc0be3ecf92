//! The discrete forward-backward system `F(w) = 0` and its Jacobians.
//!
//! Unknowns are stored time-major: for each level `n = 0..=nt` and each class
//! `j`, the block `rho^{j,n}`, then `u^{j,n}` (only for `n < nt`), then
//! `V^{j,n}`, each of length `nx`. Every residual row is owned by one unknown
//! and stored at that unknown's index:
//!
//! | owner            | row                                   |
//! |------------------|---------------------------------------|
//! | `rho^{j,0}_k`    | initial condition                     |
//! | `rho^{j,n+1}_k`  | Lax-Friedrichs continuity, `n -> n+1` |
//! | `u^{j,n}_k`      | feedback law                          |
//! | `V^{j,n}_k`      | upwind HJB, `n+1 -> n`                |
//! | `V^{j,nt}_k`     | terminal condition                    |
//!
//! With this ordering the decoupled Jacobian factors without fill: the
//! density/speed part is lower triangular and the value part upper
//! triangular.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, MAX_CLASSES};
use crate::error::{invalid, Error, Result};
use crate::grid::{check_viscosity, wrap_index, Grid};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Rho,
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownLayout {
    pub n_classes: usize,
    pub nx: usize,
    pub nt: usize,
}

impl UnknownLayout {
    pub fn new(n_classes: usize, nx: usize, nt: usize) -> Self {
        Self { n_classes, nx, nt }
    }

    pub fn for_grid(grid: &Grid, n_classes: usize) -> Self {
        Self::new(n_classes, grid.nx, grid.nt)
    }

    /// `n_classes * (2 (nt + 1) nx + nt nx)`.
    pub fn len(&self) -> usize {
        self.n_classes * (2 * (self.nt + 1) * self.nx + self.nt * self.nx)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn per_class(&self, n: usize) -> usize {
        if n < self.nt {
            3 * self.nx
        } else {
            2 * self.nx
        }
    }

    #[inline]
    pub fn level_offset(&self, n: usize) -> usize {
        n * self.n_classes * 3 * self.nx
    }

    #[inline]
    pub fn level_len(&self, n: usize) -> usize {
        self.n_classes * self.per_class(n)
    }

    #[inline]
    fn field_shift(&self, field: Field, n: usize) -> usize {
        match field {
            Field::Rho => 0,
            Field::U => {
                debug_assert!(n < self.nt, "no speed unknowns at the final level");
                self.nx
            }
            Field::V => self.per_class(n) - self.nx,
        }
    }

    /// Start of the `nx`-long block of `field` for class `j` at level `n`.
    #[inline]
    pub fn block(&self, field: Field, j: usize, n: usize) -> usize {
        self.level_offset(n) + j * self.per_class(n) + self.field_shift(field, n)
    }

    #[inline]
    pub fn index(&self, field: Field, j: usize, n: usize, k: usize) -> usize {
        self.block(field, j, n) + k
    }

    /// Inverse of [`index`](Self::index).
    pub fn locate(&self, idx: usize) -> (Field, usize, usize, usize) {
        assert!(idx < self.len());
        let full = self.n_classes * 3 * self.nx;
        let n = (idx / full).min(self.nt);
        let rem = idx - self.level_offset(n);
        let pc = self.per_class(n);
        let j = rem / pc;
        let r = rem % pc;
        let f = r / self.nx;
        let k = r % self.nx;
        let field = match (f, n < self.nt) {
            (0, _) => Field::Rho,
            (1, true) => Field::U,
            _ => Field::V,
        };
        (field, j, n, k)
    }

    /// Number of time levels carrying `field`.
    pub fn levels(&self, field: Field) -> usize {
        match field {
            Field::U => self.nt,
            _ => self.nt + 1,
        }
    }

    /// Unknown indices listing every value level from the last back to the
    /// first, then densities and speeds level by level forward in time.
    pub fn values_first_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        for n in (0..=self.nt).rev() {
            for j in 0..self.n_classes {
                let b = self.block(Field::V, j, n);
                order.extend(b..b + self.nx);
            }
        }
        for n in 0..=self.nt {
            for field in [Field::Rho, Field::U] {
                if n < self.levels(field) {
                    for j in 0..self.n_classes {
                        let b = self.block(field, j, n);
                        order.extend(b..b + self.nx);
                    }
                }
            }
        }
        order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub layout: UnknownLayout,
    pub w: Vec<f64>,
}

impl SolverState {
    pub fn zeros(layout: UnknownLayout) -> Self {
        Self {
            layout,
            w: vec![0.0; layout.len()],
        }
    }

    pub fn from_vec(layout: UnknownLayout, w: Vec<f64>) -> Result<Self> {
        if w.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: w.len(),
            });
        }
        Ok(Self { layout, w })
    }

    #[inline]
    pub fn field(&self, field: Field, j: usize, n: usize) -> &[f64] {
        let b = self.layout.block(field, j, n);
        &self.w[b..b + self.layout.nx]
    }

    #[inline]
    pub fn field_mut(&mut self, field: Field, j: usize, n: usize) -> &mut [f64] {
        let b = self.layout.block(field, j, n);
        let nx = self.layout.nx;
        &mut self.w[b..b + nx]
    }

    pub fn rho(&self, j: usize, n: usize) -> &[f64] {
        self.field(Field::Rho, j, n)
    }

    pub fn u(&self, j: usize, n: usize) -> &[f64] {
        self.field(Field::U, j, n)
    }

    pub fn v(&self, j: usize, n: usize) -> &[f64] {
        self.field(Field::V, j, n)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// All couplings, with analytic Hamiltonian partials.
    Exact,
    /// Drops the Hamiltonian terms of the HJB rows and the optimal-velocity
    /// terms of the feedback rows.
    Decoupled,
    /// Drops only the density partials of the HJB rows. The values then no
    /// longer see the densities, and the matrix is block triangular once
    /// every value level is ordered ahead of the densities and speeds
    /// (see [`UnknownLayout::values_first_order`]).
    OneWay,
}

/// One fully specified discrete problem: cost model, mesh, viscosity and
/// per-class initial cell averages.
#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub model: CostModel,
    pub grid: Grid,
    pub nu: f64,
    pub initial_density: Vec<Vec<f64>>,
}

const MAX_ROW: usize = 8;

struct RowBuf {
    n: usize,
    e: [(usize, f64); MAX_ROW],
}

impl RowBuf {
    fn new() -> Self {
        Self {
            n: 0,
            e: [(0, 0.0); MAX_ROW],
        }
    }

    #[inline]
    fn push(&mut self, c: usize, v: f64) {
        self.e[self.n] = (c, v);
        self.n += 1;
    }

    fn flush(&mut self, cols: &mut Vec<usize>, vals: &mut Vec<f64>) -> usize {
        let e = &mut self.e[..self.n];
        e.sort_unstable_by_key(|x| x.0);
        for &(c, v) in e.iter() {
            cols.push(c);
            vals.push(v);
        }
        let n = self.n;
        self.n = 0;
        n
    }
}

struct LevelRows {
    counts: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl MfgProblem {
    pub fn new(
        model: CostModel,
        grid: Grid,
        nu: f64,
        initial_density: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_viscosity(nu)?;
        if initial_density.len() != model.n_classes() {
            return Err(invalid(format!(
                "{} initial densities for {} classes",
                initial_density.len(),
                model.n_classes()
            )));
        }
        for d in &initial_density {
            if d.len() != grid.nx {
                return Err(Error::DimensionMismatch {
                    expected: grid.nx,
                    got: d.len(),
                });
            }
        }
        Ok(Self {
            model,
            grid,
            nu,
            initial_density,
        })
    }

    pub fn layout(&self) -> UnknownLayout {
        UnknownLayout::for_grid(&self.grid, self.model.n_classes())
    }

    /// Weight `nu dt / dx^2` of the discrete Laplacian of `V^{n+1}` added to
    /// each HJB row. The rows are in rate form, so the effective diffusion
    /// in the backward update is `nu dt`.
    pub fn viscous_coefficient(&self) -> f64 {
        self.nu * self.grid.dt / (self.grid.dx * self.grid.dx)
    }

    fn check_state(&self, state: &SolverState) -> Result<()> {
        if state.layout != self.layout() {
            return Err(invalid(format!(
                "state layout {:?} does not match problem layout {:?}",
                state.layout,
                self.layout()
            )));
        }
        if state.w.len() != state.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: state.layout.len(),
                got: state.w.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn densities_at(&self, s: &SolverState, n: usize, k: usize) -> [f64; MAX_CLASSES] {
        let mut r = [0.0; MAX_CLASSES];
        for (j, rj) in r.iter_mut().enumerate().take(self.model.n_classes()) {
            *rj = s.w[s.layout.index(Field::Rho, j, n, k)];
        }
        r
    }

    pub fn residual(&self, state: &SolverState) -> Result<Vec<f64>> {
        let mut out = vec![0.0; state.w.len()];
        self.residual_into(state, &mut out)?;
        Ok(out)
    }

    /// Assembles `F(w)` into `out`, in parallel over time levels. Each level
    /// writes a disjoint slice, so the result does not depend on the number
    /// of workers.
    pub fn residual_into(&self, state: &SolverState, out: &mut [f64]) -> Result<()> {
        self.check_state(state)?;
        let lay = state.layout;
        if out.len() != lay.len() {
            return Err(Error::DimensionMismatch {
                expected: lay.len(),
                got: out.len(),
            });
        }
        let mut chunks: Vec<(usize, &mut [f64])> = Vec::with_capacity(lay.nt + 1);
        let mut rest = &mut *out;
        for n in 0..=lay.nt {
            let (head, tail) = rest.split_at_mut(lay.level_len(n));
            chunks.push((n, head));
            rest = tail;
        }
        chunks
            .into_par_iter()
            .for_each(|(n, chunk)| self.level_residual(state, n, chunk));
        match out.iter().position(|v| !v.is_finite()) {
            Some(idx) => {
                let (block, class, level, cell) = row_block(&lay, idx);
                Err(Error::NumericalOverflow {
                    block,
                    class,
                    level,
                    cell,
                })
            }
            None => Ok(()),
        }
    }

    fn level_residual(&self, s: &SolverState, n: usize, out: &mut [f64]) {
        let lay = s.layout;
        let nx = lay.nx;
        let dt = self.grid.dt;
        let dx = self.grid.dx;
        let base = lay.level_offset(n);
        let w = &s.w;
        for j in 0..lay.n_classes {
            // density rows
            let r0 = lay.block(Field::Rho, j, n) - base;
            if n == 0 {
                let zeta = &self.initial_density[j];
                for k in 0..nx {
                    out[r0 + k] = w[base + r0 + k] - zeta[k];
                }
            } else {
                let rho_new = s.rho(j, n);
                let rho = s.rho(j, n - 1);
                let u = s.u(j, n - 1);
                for k in 0..nx {
                    let km = wrap_index(k as isize - 1, nx);
                    let kp = wrap_index(k as isize + 1, nx);
                    out[r0 + k] = (rho_new[k] - 0.5 * (rho[km] + rho[kp])) / dt
                        + (rho[kp] * u[kp] - rho[km] * u[km]) / (2.0 * dx);
                }
            }
            let rv = lay.block(Field::V, j, n) - base;
            if n == lay.nt {
                for k in 0..nx {
                    out[rv + k] = w[base + rv + k] - self.model.terminal_cost(self.grid.node(k));
                }
                continue;
            }
            let ru = lay.block(Field::U, j, n) - base;
            let v = s.v(j, n);
            let vn = s.v(j, n + 1);
            let u = s.u(j, n);
            let visc = self.viscous_coefficient();
            for k in 0..nx {
                let km = wrap_index(k as isize - 1, nx);
                let kp = wrap_index(k as isize + 1, nx);
                let p = (vn[kp] - vn[k]) / dx;
                let rho = self.densities_at(s, n, k);
                let h = self.model.hamiltonian_eval(j, p, &rho[..lay.n_classes]);
                let mut hjb = (vn[k] - v[k]) / dt + h.value;
                if self.nu > 0.0 {
                    hjb += visc * (vn[kp] - 2.0 * vn[k] + vn[km]);
                }
                out[rv + k] = hjb;
                out[ru + k] = u[k] - h.argmin;
            }
        }
    }

    /// Sparse `dF/dw` in the requested mode, assembled in parallel over time
    /// levels.
    pub fn jacobian(&self, state: &SolverState, mode: JacobianMode) -> Result<CsrMatrix> {
        self.check_state(state)?;
        let lay = state.layout;
        let levels: Vec<LevelRows> = (0..=lay.nt)
            .into_par_iter()
            .map(|n| self.level_jacobian(state, n, mode))
            .collect();
        let nnz: usize = levels.iter().map(|l| l.vals.len()).sum();
        let mut indptr = Vec::with_capacity(lay.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for l in levels {
            for c in l.counts {
                indptr.push(indptr.last().unwrap() + c);
            }
            indices.extend_from_slice(&l.cols);
            values.extend_from_slice(&l.vals);
        }
        Ok(CsrMatrix {
            nrows: lay.len(),
            ncols: lay.len(),
            indptr,
            indices,
            values,
        })
    }

    fn level_jacobian(&self, s: &SolverState, n: usize, mode: JacobianMode) -> LevelRows {
        let lay = s.layout;
        let nx = lay.nx;
        let nc = lay.n_classes;
        let dt = self.grid.dt;
        let dx = self.grid.dx;
        let exact = mode == JacobianMode::Exact;
        let feedback = mode != JacobianMode::Decoupled;
        let viscous = self.nu > 0.0;
        let visc = self.viscous_coefficient();
        let rows = lay.level_len(n);
        let mut out = LevelRows {
            counts: Vec::with_capacity(rows),
            cols: Vec::with_capacity(rows * 6),
            vals: Vec::with_capacity(rows * 6),
        };
        let mut buf = RowBuf::new();
        for j in 0..nc {
            // density rows
            for k in 0..nx {
                let own = lay.index(Field::Rho, j, n, k);
                buf.push(own, if n == 0 { 1.0 } else { 1.0 / dt });
                if n > 0 {
                    let km = wrap_index(k as isize - 1, nx);
                    let kp = wrap_index(k as isize + 1, nx);
                    let rho = s.rho(j, n - 1);
                    let u = s.u(j, n - 1);
                    let half = 0.5 / dt;
                    let inv2dx = 0.5 / dx;
                    buf.push(lay.index(Field::Rho, j, n - 1, km), -half - u[km] * inv2dx);
                    buf.push(lay.index(Field::Rho, j, n - 1, kp), -half + u[kp] * inv2dx);
                    buf.push(lay.index(Field::U, j, n - 1, km), -rho[km] * inv2dx);
                    buf.push(lay.index(Field::U, j, n - 1, kp), rho[kp] * inv2dx);
                }
                out.counts.push(buf.flush(&mut out.cols, &mut out.vals));
            }
            if n == lay.nt {
                for k in 0..nx {
                    buf.push(lay.index(Field::V, j, n, k), 1.0);
                    out.counts.push(buf.flush(&mut out.cols, &mut out.vals));
                }
                continue;
            }
            let vn = s.v(j, n + 1);
            let mut evals = Vec::with_capacity(nx);
            for k in 0..nx {
                let kp = wrap_index(k as isize + 1, nx);
                let p = (vn[kp] - vn[k]) / dx;
                let rho = self.densities_at(s, n, k);
                evals.push(self.model.hamiltonian_eval(j, p, &rho[..nc]));
            }
            // feedback rows
            for (k, h) in evals.iter().enumerate() {
                let kp = wrap_index(k as isize + 1, nx);
                buf.push(lay.index(Field::U, j, n, k), 1.0);
                if feedback {
                    buf.push(lay.index(Field::V, j, n + 1, k), h.dargmin_dp / dx);
                    buf.push(lay.index(Field::V, j, n + 1, kp), -h.dargmin_dp / dx);
                    for m in 0..nc {
                        buf.push(lay.index(Field::Rho, m, n, k), -h.dargmin_drho[m]);
                    }
                }
                out.counts.push(buf.flush(&mut out.cols, &mut out.vals));
            }
            // HJB rows
            for (k, h) in evals.iter().enumerate() {
                let km = wrap_index(k as isize - 1, nx);
                let kp = wrap_index(k as isize + 1, nx);
                let hp = if feedback { h.dvalue_dp } else { 0.0 };
                buf.push(lay.index(Field::V, j, n, k), -1.0 / dt);
                buf.push(
                    lay.index(Field::V, j, n + 1, k),
                    1.0 / dt - hp / dx - 2.0 * visc,
                );
                if feedback || viscous {
                    buf.push(lay.index(Field::V, j, n + 1, kp), hp / dx + visc);
                }
                if viscous {
                    buf.push(lay.index(Field::V, j, n + 1, km), visc);
                }
                if exact {
                    for m in 0..nc {
                        buf.push(lay.index(Field::Rho, m, n, k), h.dvalue_drho[m]);
                    }
                }
                out.counts.push(buf.flush(&mut out.cols, &mut out.vals));
            }
        }
        out
    }

    /// `dx * sum_k rho^{j,n}_k` for every level `n`.
    pub fn mass(&self, state: &SolverState, j: usize) -> Result<Vec<f64>> {
        mass(state, &self.grid, j)
    }
}

/// `dx * sum_k rho^{j,n}_k` for every level `n`.
pub fn mass(state: &SolverState, grid: &Grid, j: usize) -> Result<Vec<f64>> {
    if j >= state.layout.n_classes {
        return Err(invalid(format!("class {j} out of range")));
    }
    Ok((0..=state.layout.nt)
        .map(|n| grid.dx * state.rho(j, n).iter().sum::<f64>())
        .collect())
}

/// Maps a residual index to the name of its row block.
pub fn row_block(layout: &UnknownLayout, idx: usize) -> (&'static str, usize, usize, usize) {
    let (field, j, n, k) = layout.locate(idx);
    let name = match field {
        Field::Rho if n == 0 => "initial",
        Field::Rho => "continuity",
        Field::U => "feedback",
        Field::V if n == layout.nt => "terminal",
        Field::V => "hjb",
    };
    (name, j, n, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{ClassParams, CostKind};
    use crate::lu::SparseLu;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(kind: CostKind) -> CostModel {
        let classes = match kind.n_classes() {
            1 => vec![ClassParams::new(1.0, 1.0, 1.0).unwrap()],
            _ => vec![
                ClassParams::new(1.0, 1.0, 1.0).unwrap(),
                ClassParams::new(0.8, 2.0, 1.0).unwrap(),
            ],
        };
        CostModel::new(kind, classes).unwrap()
    }

    fn problem(kind: CostKind, nx: usize, nt: usize, nu: f64, rho0: f64) -> MfgProblem {
        let m = model(kind);
        let nc = m.n_classes();
        let grid = Grid::new(nc as f64, 1.0, nx, nt).unwrap();
        MfgProblem::new(m, grid, nu, vec![vec![rho0; nx]; nc]).unwrap()
    }

    /// Densities in (0.1, 0.3), small value gradients and arbitrary speeds,
    /// so no cell sits at a clamp kink.
    fn interior_state(p: &MfgProblem, seed: u64) -> SolverState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = p.layout();
        let mut s = SolverState::zeros(lay);
        let dx = p.grid.dx;
        for idx in 0..lay.len() {
            let (f, _, _, _) = lay.locate(idx);
            s.w[idx] = match f {
                Field::Rho => rng.random_range(0.1..0.3),
                Field::U => rng.random_range(0.0..1.0),
                Field::V => rng.random_range(-1.0..1.0) * 0.02 * dx,
            };
        }
        s
    }

    #[test]
    fn layout_sizes_and_round_trip() {
        let lay = UnknownLayout::new(1, 30, 120);
        assert_eq!(lay.len(), 10_860);
        let lay = UnknownLayout::new(2, 5, 4);
        assert_eq!(lay.len(), 2 * (3 * 5 * 4 + 2 * 5));
        for idx in 0..lay.len() {
            let (f, j, n, k) = lay.locate(idx);
            assert_eq!(lay.index(f, j, n, k), idx);
        }
        assert_eq!(lay.levels(Field::U), 4);
        assert_eq!(lay.levels(Field::V), 5);
    }

    #[test]
    fn uniform_equilibrium_has_zero_residual() {
        for kind in [
            CostKind::Lwr1,
            CostKind::Sep1,
            CostKind::Nonsep1,
            CostKind::Glwr,
            CostKind::Gns,
        ] {
            for nu in [0.0, 0.05] {
                let p = problem(kind, 12, 20, nu, 0.3);
                let lay = p.layout();
                let mut s = SolverState::zeros(lay);
                let nc = lay.n_classes;
                let rho = vec![0.3; nc];
                for j in 0..nc {
                    let h = p.model.hamiltonian(j, 0.0, &rho).unwrap();
                    let a = p.model.optimal_velocity(j, 0.0, &rho).unwrap();
                    for n in 0..=lay.nt {
                        s.field_mut(Field::Rho, j, n).fill(0.3);
                        s.field_mut(Field::V, j, n)
                            .fill((lay.nt - n) as f64 * p.grid.dt * h);
                        if n < lay.nt {
                            s.field_mut(Field::U, j, n).fill(a);
                        }
                    }
                }
                let r = p.residual(&s).unwrap();
                let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(worst < 1e-12, "{kind:?} nu={nu}: {worst}");
            }
        }
    }

    #[test]
    fn viscosity_adds_discrete_laplacian() {
        let p0 = problem(CostKind::Glwr, 10, 8, 0.0, 0.2);
        let mut p1 = p0.clone();
        p1.nu = 0.07;
        let s = interior_state(&p0, 3);
        let r0 = p0.residual(&s).unwrap();
        let r1 = p1.residual(&s).unwrap();
        let lay = s.layout;
        let c = 0.07 * p0.grid.dt / (p0.grid.dx * p0.grid.dx);
        assert_eq!(c, p1.viscous_coefficient());
        for idx in 0..lay.len() {
            let (f, j, n, k) = lay.locate(idx);
            let expect = if f == Field::V && n < lay.nt {
                let v = s.v(j, n + 1);
                c * (v[(k + 1) % 10] - 2.0 * v[k] + v[(k + 9) % 10])
            } else {
                0.0
            };
            assert!((r1[idx] - r0[idx] - expect).abs() < 1e-12, "{idx}");
        }
    }

    #[test]
    fn continuity_rows_telescope_to_mass_change() {
        let p = problem(CostKind::Gs, 16, 10, 0.0, 0.2);
        let s = interior_state(&p, 5);
        let r = p.residual(&s).unwrap();
        let lay = s.layout;
        for j in 0..2 {
            let mass = p.mass(&s, j).unwrap();
            for n in 1..=lay.nt {
                let b = lay.block(Field::Rho, j, n);
                let sum: f64 = r[b..b + lay.nx].iter().sum();
                let expect = (mass[n] - mass[n - 1]) / (p.grid.dx * p.grid.dt);
                assert!((sum - expect).abs() < 1e-10 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pattern_is_state_independent_and_nested() {
        for nu in [0.0, 0.05] {
            let p = problem(CostKind::Gns, 9, 6, nu, 0.2);
            let a = p
                .jacobian(&interior_state(&p, 1), JacobianMode::Exact)
                .unwrap();
            let b = p
                .jacobian(&SolverState::zeros(p.layout()), JacobianMode::Exact)
                .unwrap();
            let d = p
                .jacobian(&interior_state(&p, 2), JacobianMode::Decoupled)
                .unwrap();
            assert_eq!(a.indptr, b.indptr);
            assert_eq!(a.indices, b.indices);
            assert!(d.pattern_contained_in(&a));
            assert!(a.max_row_nnz() <= 7);
            a.check().unwrap();
            for r in 0..a.nrows {
                let (cols, _) = a.row(r);
                assert!(cols.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn exact_jacobian_matches_directional_differences() {
        for kind in [
            CostKind::Lwr1,
            CostKind::Sep1,
            CostKind::Glwr,
            CostKind::Gs,
            CostKind::Gns,
        ] {
            for nu in [0.0, 0.03] {
                let p = problem(kind, 10, 12, nu, 0.2);
                let s = interior_state(&p, 11);
                let jac = p.jacobian(&s, JacobianMode::Exact).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                let eps = 1e-6;
                for _ in 0..20 {
                    let d: Vec<f64> = (0..s.w.len())
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect();
                    let shift = |sign: f64| {
                        let mut t = s.clone();
                        for (w, dd) in t.w.iter_mut().zip(&d) {
                            *w += sign * eps * dd;
                        }
                        p.residual(&t).unwrap()
                    };
                    let (fp, fm) = (shift(1.0), shift(-1.0));
                    let fd: Vec<f64> = fp
                        .iter()
                        .zip(&fm)
                        .map(|(a, b)| (a - b) / (2.0 * eps))
                        .collect();
                    let mut jd = vec![0.0; d.len()];
                    jac.matvec(&d, &mut jd);
                    let diff: Vec<f64> = fd.iter().zip(&jd).map(|(a, b)| a - b).collect();
                    let rel = crate::sparse::norm2(&diff) / crate::sparse::norm2(&jd);
                    assert!(rel <= 1e-5, "{kind:?} nu={nu}: {rel}");
                }
            }
        }
    }

    #[test]
    fn decoupled_jacobian_factors_without_fill() {
        for nu in [0.0, 0.05] {
            let p = problem(CostKind::Glwr, 12, 10, nu, 0.2);
            let a = p
                .jacobian(&interior_state(&p, 4), JacobianMode::Decoupled)
                .unwrap();
            let lu = SparseLu::factor(&a).unwrap();
            let (l, u) = lu.nnz();
            assert_eq!(l + u, a.nnz() + a.nrows);
            assert!(lu.is_identity_permutation());
        }
    }

    #[test]
    fn one_way_jacobian_is_triangular_after_reordering() {
        for kind in [CostKind::Glwr, CostKind::Gs, CostKind::Gns, CostKind::Sep1] {
            let p = problem(kind, 12, 10, 0.03, 0.2);
            let s = interior_state(&p, 5);
            let exact = p.jacobian(&s, JacobianMode::Exact).unwrap();
            let a = p.jacobian(&s, JacobianMode::OneWay).unwrap();
            assert!(a.pattern_contained_in(&exact));
            let order = p.layout().values_first_order();
            let mut seen = order.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..a.nrows).collect::<Vec<_>>());
            let b = a.permuted(&order).unwrap();
            for r in 0..b.nrows {
                assert!(
                    b.row(r).0.iter().all(|&c| c <= r),
                    "{kind:?} row {r} above diagonal"
                );
            }
            let lu = SparseLu::factor(&b).unwrap();
            let (l, u) = lu.nnz();
            assert_eq!(l + u, b.nnz() + b.nrows);
        }
    }

    #[test]
    fn one_way_differs_from_exact_only_in_density_partials_of_values() {
        let p = problem(CostKind::Gs, 10, 8, 0.0, 0.2);
        let s = interior_state(&p, 6);
        let exact = p.jacobian(&s, JacobianMode::Exact).unwrap();
        let a = p.jacobian(&s, JacobianMode::OneWay).unwrap();
        let lay = p.layout();
        for r in 0..exact.nrows {
            let (cols, vals) = exact.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let dropped = lay.locate(r).0 == Field::V && lay.locate(c).0 == Field::Rho;
                let expect = if dropped { 0.0 } else { v };
                assert_eq!(a.get(r, c), expect, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn non_finite_state_names_the_block() {
        let p = problem(CostKind::Lwr1, 8, 5, 0.0, 0.2);
        let mut s = interior_state(&p, 9);
        let idx = s.layout.index(Field::U, 0, 3, 4);
        s.w[idx] = f64::NAN;
        match p.residual(&s) {
            Err(Error::NumericalOverflow { block, level, .. }) => {
                assert_eq!(block, "feedback");
                assert_eq!(level, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let p = problem(CostKind::Lwr1, 8, 5, 0.0, 0.2);
        let s = SolverState::zeros(UnknownLayout::new(1, 8, 6));
        assert!(p.residual(&s).is_err());
        assert!(MfgProblem::new(model(CostKind::Gs), p.grid, 0.0, vec![vec![0.0; 8]]).is_err());
        assert!(MfgProblem::new(model(CostKind::Lwr1), p.grid, -1.0, vec![vec![0.0; 8]]).is_err());
    }

    fn shifted(s: &SolverState, by: usize) -> SolverState {
        let lay = s.layout;
        let mut t = s.clone();
        for idx in 0..lay.len() {
            let (f, j, n, k) = lay.locate(idx);
            t.w[lay.index(f, j, n, (k + by) % lay.nx)] = s.w[idx];
        }
        t
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_commutes_with_cell_shifts(seed in 0u64..1000, by in 1usize..10, nu in 0.0f64..0.05) {
            let mut p = problem(CostKind::Gns, 10, 6, nu, 0.2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.initial_density = (0..2).map(|_| (0..10).map(|_| rng.random_range(0.0..0.4)).collect()).collect();
            let s = interior_state(&p, seed);
            let r = p.residual(&s).unwrap();
            let mut q = p.clone();
            for d in q.initial_density.iter_mut() {
                d.rotate_right(by);
            }
            let rs = q.residual(&shifted(&s, by)).unwrap();
            let expect = shifted(&SolverState::from_vec(s.layout, r).unwrap(), by);
            for (a, b) in rs.iter().zip(&expect.w) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
