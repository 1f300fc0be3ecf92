//! Left-looking sparse LU with threshold partial pivoting.
//!
//! Columns are factored one at a time by a sparse triangular solve whose
//! nonzero pattern comes from a depth-first reach through the partial `L`.
//! The diagonal entry is kept as pivot whenever it is within a factor
//! `pivot_threshold` of the column maximum, which preserves the natural
//! ordering (and the sparsity it buys) on the systems assembled here.

use crate::error::{invalid, Error, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuSettings {
    /// Diagonal preference in `(0, 1]`; 1 is plain partial pivoting.
    pub pivot_threshold: f64,
    /// Pivots below `singular_tol * max|A(:, k)|` are treated as zero.
    pub singular_tol: f64,
}

impl Default for LuSettings {
    fn default() -> Self {
        Self {
            pivot_threshold: 1e-3,
            singular_tol: 1e-14,
        }
    }
}

/// `P A = L U` with unit lower `L` (diagonal stored first in each column) and
/// upper `U` (diagonal stored last), both compressed by column.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    up: Vec<usize>,
    ui: Vec<usize>,
    ux: Vec<f64>,
    /// `pinv[row] = step` at which the original row was chosen as pivot.
    pinv: Vec<usize>,
}

const UNSET: usize = usize::MAX;

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_with(a, LuSettings::default())
    }

    pub fn factor_with(a: &CsrMatrix, settings: LuSettings) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(invalid(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        let (ap, ai, ax) = a.to_csc();
        let est = 4 * ax.len() + n;
        let mut lp = Vec::with_capacity(n + 1);
        let mut li: Vec<usize> = Vec::with_capacity(est);
        let mut lx = Vec::with_capacity(est);
        let mut up = Vec::with_capacity(n + 1);
        let mut ui = Vec::with_capacity(est);
        let mut ux = Vec::with_capacity(est);
        let mut pinv = vec![UNSET; n];
        let mut x = vec![0.0; n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];

        for k in 0..n {
            lp.push(li.len());
            up.push(ui.len());
            let col = ap[k]..ap[k + 1];

            // Pattern of L \ A(:, k) in topological order, stored in xi[top..n].
            let mut top = n;
            for &start in &ai[col.clone()] {
                if marked[start] {
                    continue;
                }
                let mut head = 0usize;
                stack[0] = start;
                loop {
                    let j = stack[head];
                    let jcol = pinv[j];
                    if !marked[j] {
                        marked[j] = true;
                        // skip the unit diagonal stored first
                        pstack[head] = if jcol == UNSET { 0 } else { lp[jcol] + 1 };
                    }
                    let mut done = true;
                    if jcol != UNSET {
                        let end = lp[jcol + 1];
                        let mut p = pstack[head];
                        while p < end {
                            let i = li[p];
                            p += 1;
                            if !marked[i] {
                                pstack[head] = p;
                                head += 1;
                                stack[head] = i;
                                done = false;
                                break;
                            }
                        }
                    }
                    if done {
                        top -= 1;
                        xi[top] = j;
                        if head == 0 {
                            break;
                        }
                        head -= 1;
                    }
                }
            }
            for &i in &xi[top..n] {
                marked[i] = false;
                x[i] = 0.0;
            }
            let mut colmax = 0.0f64;
            for p in col {
                x[ai[p]] = ax[p];
                colmax = colmax.max(ax[p].abs());
            }

            // Sparse forward substitution.
            for &j in &xi[top..n] {
                let jcol = pinv[j];
                if jcol == UNSET {
                    continue;
                }
                let xj = x[j];
                for p in lp[jcol] + 1..lp[jcol + 1] {
                    x[li[p]] -= lx[p] * xj;
                }
            }

            // Pivot choice.
            let mut ipiv = UNSET;
            let mut best = -1.0f64;
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    if x[i].abs() > best {
                        best = x[i].abs();
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if ipiv == UNSET || !(best > settings.singular_tol * colmax) || best == 0.0 {
                return Err(Error::SingularPreconditioner {
                    step: k,
                    pivot: best.max(0.0),
                });
            }
            if pinv[k] == UNSET && x[k].abs() >= settings.pivot_threshold * best {
                ipiv = k;
            }
            let pivot = x[ipiv];
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(1.0);
            for &i in &xi[top..n] {
                if pinv[i] == UNSET {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        lp.push(li.len());
        up.push(ui.len());
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self {
            n,
            lp,
            li,
            lx,
            up,
            ui,
            ux,
            pinv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L` and `U`, diagonals included.
    pub fn nnz(&self) -> (usize, usize) {
        (self.li.len(), self.ui.len())
    }

    /// Whether the natural order survived pivoting.
    pub fn is_identity_permutation(&self) -> bool {
        self.pinv.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut x = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            x[self.pinv[i]] = bi;
        }
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j] + 1..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in (0..self.n).rev() {
            let last = self.up[j + 1] - 1;
            x[j] /= self.ux[last];
            let xj = x[j];
            if xj != 0.0 {
                for p in self.up[j]..last {
                    x[self.ui[p]] -= self.ux[p] * xj;
                }
            }
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl LinearOperator for SparseLu {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.solve_in_place(y);
    }
}

/// Factors an approximate Jacobian once for use as a right preconditioner.
pub fn build_preconditioner(j_approx: &CsrMatrix) -> Result<SparseLu> {
    SparseLu::factor(j_approx)
}

/// LU of `Q A Q^T`, applied as the inverse of `A`.
#[derive(Debug, Clone)]
pub struct PermutedLu {
    lu: SparseLu,
    order: Vec<usize>,
}

impl PermutedLu {
    pub fn factor(a: &CsrMatrix, order: Vec<usize>) -> Result<Self> {
        let lu = SparseLu::factor(&a.permuted(&order)?)?;
        Ok(Self { lu, order })
    }

    pub fn factors(&self) -> &SparseLu {
        &self.lu
    }
}

impl LinearOperator for PermutedLu {
    fn dim(&self) -> usize {
        self.lu.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut z: Vec<f64> = self.order.iter().map(|&o| x[o]).collect();
        self.lu.solve_in_place(&mut z);
        for (&o, v) in self.order.iter().zip(z) {
            y[o] = v;
        }
    }
}
