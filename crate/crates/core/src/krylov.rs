//! Restarted GMRES augmented with error approximations from previous cycles
//! ("loose" GMRES), right-preconditioned.
//!
//! Each cycle runs `m` Arnoldi steps on `A M`, then appends up to `a` stored
//! pairs `(z, A z)` where `z` is a normalized correction from an earlier
//! cycle. Because the search directions are stored explicitly the method is
//! a flexible GMRES over a mixed basis; the least-squares problem is solved
//! with Givens rotations.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::sparse::{dot, norm2, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovSettings {
    /// Krylov steps per cycle.
    pub restart: usize,
    /// Number of retained error-approximation vectors.
    pub augmentation: usize,
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    /// Cap on total inner iterations across cycles.
    pub max_iters: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self {
            restart: 30,
            augmentation: 3,
            tol: 1e-8,
            max_iters: 1000,
        }
    }
}

impl KrylovSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restart < 1 {
            return Err(invalid("krylov restart must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(invalid(format!(
                "krylov tolerance {} outside (0, 1)",
                self.tol
            )));
        }
        if self.max_iters < 1 {
            return Err(invalid("krylov max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    /// Inner iterations (operator applications inside Arnoldi).
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// A zero Arnoldi norm stopped the last cycle before the target.
    pub breakdown: bool,
}

pub fn lgmres_solve(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn LinearOperator,
    settings: &KrylovSettings,
) -> Result<KrylovOutcome> {
    settings.validate()?;
    let n = a.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.dim(),
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(KrylovOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            breakdown: false,
        });
    }
    let target = settings.tol * bnorm;
    let mut r = b.to_vec();
    let mut rnorm = bnorm;
    let mut iters = 0usize;
    let mut aug: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut breakdown = false;
    let mut tmp = vec![0.0; n];

    while rnorm > target && iters < settings.max_iters {
        let kmax = settings.restart + aug.len();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(kmax + 1);
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(kmax);
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(kmax);
        let mut cs: Vec<f64> = Vec::with_capacity(kmax);
        let mut sn: Vec<f64> = Vec::with_capacity(kmax);
        let mut g = vec![0.0; kmax + 1];
        g[0] = rnorm;
        basis.push(r.iter().map(|v| v / rnorm).collect());
        breakdown = false;

        for step in 0..kmax {
            let mut w = vec![0.0; n];
            let z = if step < settings.restart {
                m.apply(&basis[step], &mut tmp);
                a.apply(&tmp, &mut w);
                tmp.clone()
            } else {
                let (z, az) = &aug[step - settings.restart];
                w.copy_from_slice(az);
                z.clone()
            };
            iters += 1;
            // modified Gram-Schmidt
            let mut h = vec![0.0; step + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm2(&w);
            h[step + 1] = hnext;
            for i in 0..step {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = h[step].hypot(h[step + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (h[step] / denom, h[step + 1] / denom)
            };
            h[step] = denom;
            h[step + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g[step + 1] = -s * g[step];
            g[step] *= c;
            let est = g[step + 1].abs();
            hcols.push(h);
            dirs.push(z);
            if est <= target || iters >= settings.max_iters {
                break;
            }
            if hnext <= 1e-14 * bnorm {
                breakdown = true;
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        // back substitution for the correction coefficients
        let k = dirs.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for jj in i + 1..k {
                s -= hcols[jj][i] * y[jj];
            }
            y[i] = if hcols[i][i] != 0.0 {
                s / hcols[i][i]
            } else {
                0.0
            };
        }
        let mut dx = vec![0.0; n];
        for (yi, d) in y.iter().zip(&dirs) {
            for (a, b) in dx.iter_mut().zip(d) {
                *a += yi * b;
            }
        }
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        // true residual; A dx falls out as the change in residual
        a.apply(&x, &mut tmp);
        let r_new: Vec<f64> = b.iter().zip(&tmp).map(|(p, q)| p - q).collect();
        let dnorm = norm2(&dx);
        if settings.augmentation > 0 && dnorm > 0.0 {
            let z: Vec<f64> = dx.iter().map(|v| v / dnorm).collect();
            let az: Vec<f64> = r.iter().zip(&r_new).map(|(p, q)| (p - q) / dnorm).collect();
            aug.push_front((z, az));
            aug.truncate(settings.augmentation);
        }
        r = r_new;
        rnorm = norm2(&r);
        if breakdown || dnorm == 0.0 {
            break;
        }
    }

    Ok(KrylovOutcome {
        x,
        iterations: iters,
        relative_residual: rnorm / bnorm,
        converged: rnorm <= target,
        breakdown: breakdown && rnorm > target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{CsrMatrix, Identity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_one_iteration() {
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let out =
            lgmres_solve(&Identity(50), &b, &Identity(50), &KrylovSettings::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        for (x, y) in out.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_with_exact_inverse() {
        let d: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let a = CsrMatrix::from_diagonal(&d);
        let m = CsrMatrix::from_diagonal(&inv);
        let b = vec![1.0; 100];
        let s = KrylovSettings {
            tol: 1e-12,
            ..KrylovSettings::default()
        };
        let out = lgmres_solve(&a, &b, &m, &s).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.relative_residual <= 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(lgmres_solve(
            &Identity(3),
            &[1.0, 2.0],
            &Identity(3),
            &KrylovSettings::default()
        )
        .is_err());
        assert!(lgmres_solve(
            &Identity(3),
            &[1.0, 2.0, 3.0],
            &Identity(4),
            &KrylovSettings::default()
        )
        .is_err());
    }

    #[test]
    fn zero_rhs() {
        let out = lgmres_solve(
            &Identity(4),
            &[0.0; 4],
            &Identity(4),
            &KrylovSettings::default(),
        )
        .unwrap();
        assert!(out.converged && out.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nonsymmetric_restarts_converge() {
        // Convection-diffusion-like nonsymmetric matrix forces several cycles.
        let n = 200;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.5));
            if i > 0 {
                t.push((i, i - 1, -1.6));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.4));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = KrylovSettings {
            restart: 10,
            augmentation: 3,
            tol: 1e-10,
            max_iters: 2000,
        };
        let out = lgmres_solve(&a, &b, &Identity(n), &s).unwrap();
        assert!(out.converged, "rel {}", out.relative_residual);
        assert!(out.iterations > 10);
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn random_sparse_matches_dense_solve() {
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for _ in 0..6 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    off += v.abs();
                    t.push((i, j, v));
                }
            }
            t.push((i, i, off + rng.random_range(0.5..1.5)));
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = KrylovSettings {
            restart: 30,
            augmentation: 3,
            tol: 1e-12,
            max_iters: 1000,
        };
        let out = lgmres_solve(&a, &b, &Identity(n), &s).unwrap();
        assert!(out.converged);
        let exact = dense_solve(a.to_dense(), b);
        let err: Vec<f64> = out.x.iter().zip(&exact).map(|(p, q)| p - q).collect();
        assert!(norm2(&err) <= 1e-8 * norm2(&exact));
    }

    #[test]
    fn max_iters_flags_nonconvergence() {
        let n = 100;
        let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 10.0).collect();
        let a = CsrMatrix::from_diagonal(&d);
        let s = KrylovSettings {
            restart: 2,
            augmentation: 0,
            tol: 1e-12,
            max_iters: 4,
        };
        let out = lgmres_solve(&a, &vec![1.0; n], &Identity(n), &s).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 4);
    }
}
