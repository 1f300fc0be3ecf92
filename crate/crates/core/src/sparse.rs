//! Compressed sparse row matrices and the linear-operator abstraction used by
//! the Krylov solver.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Anything that can compute `y = A x` for a square `A`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// The identity operator of a given size.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Rows per rayon task in the parallel product.
const MATVEC_CHUNK: usize = 4096;

impl CsrMatrix {
    /// Builds from raw arrays, checking the structural invariants.
    pub fn new(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        if self.indptr.len() != self.nrows + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.nrows + 1,
                got: self.indptr.len(),
            });
        }
        if self.indices.len() != self.values.len()
            || *self.indptr.last().unwrap() != self.indices.len()
        {
            return Err(invalid("indptr/indices/values lengths disagree"));
        }
        for r in 0..self.nrows {
            let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
            if self.indptr[r] > self.indptr[r + 1] {
                return Err(invalid(format!("row pointer decreases at row {r}")));
            }
            if row.iter().any(|&c| c >= self.ncols) {
                return Err(invalid(format!("column index out of range in row {r}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!(
                    "columns not strictly increasing in row {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Sums duplicate entries.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = t.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(invalid(format!("triplet ({r}, {c}) out of range")));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self::new(nrows, ncols, indptr, indices, values)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|p| vals[p]).unwrap_or(0.0)
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.nrows)
            .map(|r| self.indptr[r + 1] - self.indptr[r])
            .max()
            .unwrap_or(0)
    }

    /// Same sparsity pattern as `other` restricted to this matrix's entries.
    pub fn pattern_contained_in(&self, other: &CsrMatrix) -> bool {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return false;
        }
        (0..self.nrows).all(|r| {
            let (cols, _) = self.row(r);
            let (ocols, _) = other.row(r);
            cols.iter().all(|c| ocols.binary_search(c).is_ok())
        })
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_chunks_mut(MATVEC_CHUNK)
            .enumerate()
            .for_each(|(chunk, ys)| {
                let base = chunk * MATVEC_CHUNK;
                for (i, yi) in ys.iter_mut().enumerate() {
                    let r = base + i;
                    let mut s = 0.0;
                    for p in self.indptr[r]..self.indptr[r + 1] {
                        s += self.values[p] * x[self.indices[p]];
                    }
                    *yi = s;
                }
            });
    }

    /// Compressed-column copy as `(colptr, rowind, values)`.
    pub fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut colptr = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            colptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        let mut next = colptr.clone();
        let mut rowind = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[p];
                rowind[next[c]] = r;
                vals[next[c]] = self.values[p];
                next[c] += 1;
            }
        }
        (colptr, rowind, vals)
    }

    /// Symmetric permutation `B = Q A Q^T` with `B[i][k] = A[order[i]][order[k]]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.nrows;
        if self.ncols != n || order.len() != n {
            return Err(invalid(
                "symmetric permutation needs a square matrix and a full order",
            ));
        }
        let mut inv = vec![usize::MAX; n];
        for (i, &o) in order.iter().enumerate() {
            if o >= n || inv[o] != usize::MAX {
                return Err(invalid("order is not a permutation"));
            }
            inv[o] = i;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for &o in order {
            let (cols, vals) = self.row(o);
            row.clear();
            row.extend(cols.iter().map(|&c| inv[c]).zip(vals.iter().copied()));
            row.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self::new(n, n, indptr, indices, values)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                row[*c] = *v;
            }
        }
        d
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_sort() {
        let m =
            CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 0.5)])
                .unwrap();
        assert_eq!(m.indptr, vec![0, 1, 3]);
        assert_eq!(m.indices, vec![1, 0, 2]);
        assert_eq!(m.values, vec![2.0, 3.0, 1.5]);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn rejects_unsorted_rows() {
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn matvec_and_csc_agree() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 1.0),
                (0, 2, 2.0),
                (1, 1, 3.0),
                (2, 0, 4.0),
                (2, 2, 5.0),
            ],
        )
        .unwrap();
        let mut y = vec![0.0; 3];
        m.matvec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![7.0, 6.0, 19.0]);
        let (cp, ri, v) = m.to_csc();
        assert_eq!(cp, vec![0, 2, 3, 5]);
        assert_eq!(ri, vec![0, 2, 1, 0, 2]);
        assert_eq!(v, vec![1.0, 4.0, 3.0, 2.0, 5.0]);
    }

    #[test]
    fn pattern_containment() {
        let a = CsrMatrix::identity(3);
        let b =
            CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (2, 0, 1.0)])
                .unwrap();
        assert!(a.pattern_contained_in(&b));
        assert!(!b.pattern_contained_in(&a));
    }
}
