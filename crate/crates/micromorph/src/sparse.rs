//! Sparse symmetric matrices, conjugate gradients and Matrix Market export.

use crate::{Error, Result};
use std::io::Write;

/// Coordinate-format accumulator used during assembly. Duplicate entries add up.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut sorted = self.entries.clone();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last = None;
        for &(i, j, v) in &sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// y = A^T x (needed for rectangular coupling blocks).
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * x[i];
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.values[k];
            }
        }
        0.0
    }

    /// Maximum relative symmetry defect, max |a_ij - a_ji| / max|a|.
    pub fn symmetry_defect(&self) -> f64 {
        let amax = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut defect = 0.0f64;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                defect = defect.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        defect / amax
    }

    /// Zero the rows and columns of the masked dofs, put 1 on their diagonal.
    /// Keeps symmetry. Matching rhs entries must be zeroed by the caller.
    pub fn constrain(&self, mask: &[bool]) -> CsrMatrix {
        assert_eq!(mask.len(), self.nrows);
        assert_eq!(self.nrows, self.ncols);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                let j = out.col_idx[k];
                if mask[i] || mask[j] {
                    out.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        out
    }

    /// Extract the principal submatrix of the unmasked (free) dofs.
    pub fn restrict(&self, mask: &[bool]) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut newid = vec![usize::MAX; self.nrows];
        let mut n = 0;
        for i in 0..self.nrows {
            if !mask[i] {
                newid[i] = n;
                n += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            if mask[i] {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if !mask[j] {
                    col_idx.push(newid[j]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[newid[i] + 1] = col_idx.len();
        }
        CsrMatrix { nrows: n, ncols: n, row_ptr, col_idx, values }
    }

    /// Write in Matrix Market coordinate format (1-based, general).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.values.len())?;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(w, "{} {} {:.17e}", i + 1, self.col_idx[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients with Jacobi preconditioner.
/// Solves A x = b for SPD A to relative residual `tol`.
pub fn cg_jacobi(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgInfo)> {
    let n = b.len();
    let diag = a.diagonal();
    let minv: Vec<f64> = diag.iter().map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgInfo { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = norm(&r);
        if rnorm <= tol * bnorm {
            return Ok((x, CgInfo { iterations: it, relative_residual: rnorm / bnorm }));
        }
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = norm(&r);
    if rnorm <= tol * bnorm {
        Ok((x, CgInfo { iterations: max_iter, relative_residual: rnorm / bnorm }))
    } else {
        Err(Error::NoConvergence(max_iter, rnorm / bnorm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        t.to_csr()
    }

    #[test]
    fn triplets_accumulate_duplicates() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, -1.0);
        let a = t.to_csr();
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn cg_solves_laplacian() {
        let a = laplace_1d(50);
        let b = vec![1.0; 50];
        let (x, info) = cg_jacobi(&a, &b, 1e-12, 1000).unwrap();
        let r: Vec<f64> = a.apply(&x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
        assert!(norm(&r) <= 1e-10 * norm(&b));
        assert!(info.iterations <= 50);
    }

    #[test]
    fn constrain_keeps_symmetry_and_identity_rows() {
        let a = laplace_1d(5);
        let mask = vec![true, false, false, false, true];
        let c = a.constrain(&mask);
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 0), 0.0);
        assert!(c.symmetry_defect() < 1e-15);
    }

    #[test]
    fn restrict_extracts_free_block() {
        let a = laplace_1d(4);
        let mask = vec![true, false, false, true];
        let r = a.restrict(&mask);
        assert_eq!(r.nrows, 2);
        assert_eq!(r.get(0, 0), 2.0);
        assert_eq!(r.get(0, 1), -1.0);
    }
}
