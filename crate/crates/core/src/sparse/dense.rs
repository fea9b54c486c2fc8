use std::ops::{Index, IndexMut};

use crate::error::{check_dim, Error, Result};
use crate::sparse::csr::CsrMatrix;
use crate::sparse::factor::LowerFactor;

/// Largest dimension accepted by the dense factorization and eigen routines.
pub const DENSE_LIMIT: usize = 4096;

/// Row-major dense matrix used by oracles and small-instance checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_dim(self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Solves `self * x = b` through the LDLᵀ factorization (SPD input only).
    pub fn solve_spd(&self, b: &[f64]) -> Result<Vec<f64>> {
        dense_cholesky(self)?.apply_inverse(b)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Exact LDLᵀ factorization with unit lower L of a dense symmetric matrix.
///
/// Fails with the index of the first nonpositive pivot when the input is not
/// positive definite.
pub fn dense_cholesky(a: &DenseMatrix) -> Result<LowerFactor> {
    check_dim(a.rows(), a.cols())?;
    let n = a.rows();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    // l holds the strict lower factor, row-major
    let mut l = DenseMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    let mut scaled = vec![0.0; n];
    for j in 0..n {
        let lj = l.row(j);
        for k in 0..j {
            scaled[k] = lj[k] * d[k];
        }
        let dj = a[(j, j)] - (0..j).map(|k| lj[k] * scaled[k]).sum::<f64>();
        if !(dj > 0.0) || !dj.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        d[j] = dj;
        for i in j + 1..n {
            let li = l.row(i);
            let s: f64 = (0..j).map(|k| li[k] * scaled[k]).sum();
            l[(i, j)] = (a[(i, j)] - s) / dj;
        }
    }
    let strict = CsrMatrix::from_dense(&l, 0.0)?;
    LowerFactor::new(strict, d)
}
