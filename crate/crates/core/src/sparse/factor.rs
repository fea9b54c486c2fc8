use crate::error::{check_dim, Error, Result};
use crate::sparse::csr::CsrMatrix;
use crate::sparse::dense::DenseMatrix;

/// A factored SPD operator `P = (I + L) D (I + L)ᵀ`.
///
/// `L` is strictly lower triangular; the unit diagonal of `I + L` is implicit
/// and never stored. All entries of `D` are positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerFactor {
    strict_lower: CsrMatrix,
    diag: Vec<f64>,
}

impl LowerFactor {
    pub fn new(strict_lower: CsrMatrix, diag: Vec<f64>) -> Result<Self> {
        check_dim(strict_lower.n(), diag.len())?;
        for i in 0..strict_lower.n() {
            if strict_lower.row(i).0.iter().any(|&j| j >= i) {
                return Err(Error::InvalidMatrix(format!(
                    "factor row {i} has an entry on or above the diagonal"
                )));
            }
        }
        if let Some((row, &value)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::NonPositiveDiagonal { row, value });
        }
        Ok(Self { strict_lower, diag })
    }

    /// Factor with empty `L`, i.e. `P = D`.
    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        Self::new(CsrMatrix::zeros(diag.len()), diag)
    }

    pub fn identity(n: usize) -> Self {
        Self { strict_lower: CsrMatrix::zeros(n), diag: vec![1.0; n] }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn strict_lower(&self) -> &CsrMatrix {
        &self.strict_lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn into_parts(self) -> (CsrMatrix, Vec<f64>) {
        (self.strict_lower, self.diag)
    }

    /// Overwrites `x` with `(I + L)⁻¹ x`.
    pub fn solve_unit_lower_in_place(&self, x: &mut [f64]) {
        let l = &self.strict_lower;
        for i in 0..self.n() {
            let (cols, vals) = l.row(i);
            let s: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
            x[i] -= s;
        }
    }

    /// Overwrites `x` with `(I + L)⁻ᵀ x`.
    pub fn solve_unit_upper_in_place(&self, x: &mut [f64]) {
        let l = &self.strict_lower;
        for i in (0..self.n()).rev() {
            let xi = x[i];
            let (cols, vals) = l.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                x[j] -= v * xi;
            }
        }
    }

    /// `z = P⁻¹ r` by forward solve, diagonal scale, backward solve.
    pub fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), r.len())?;
        let mut z = r.to_vec();
        self.apply_inverse_in_place(&mut z);
        Ok(z)
    }

    pub(crate) fn apply_inverse_in_place(&self, z: &mut [f64]) {
        self.solve_unit_lower_in_place(z);
        for (zi, d) in z.iter_mut().zip(&self.diag) {
            *zi /= d;
        }
        self.solve_unit_upper_in_place(z);
    }

    /// `(I + L)ᵀ x`.
    pub fn upper_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), x.len())?;
        let mut y = x.to_vec();
        for i in 0..self.n() {
            let (cols, vals) = self.strict_lower.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    /// `(I + L) x`.
    pub fn lower_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n(), x.len())?;
        Ok((0..self.n())
            .map(|i| {
                let (cols, vals) = self.strict_lower.row(i);
                x[i] + cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>()
            })
            .collect())
    }

    /// `P x` without forming `P`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.upper_matvec(x)?;
        for (wi, d) in w.iter_mut().zip(&self.diag) {
            *wi *= d;
        }
        self.lower_matvec(&w)
    }

    /// `I + L` as an explicit CSR matrix.
    pub fn unit_lower(&self) -> CsrMatrix {
        let n = self.n();
        let l = &self.strict_lower;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(l.nnz() + n);
        let mut values = Vec::with_capacity(l.nnz() + n);
        row_ptr.push(0);
        for i in 0..n {
            let (cols, vals) = l.row(i);
            col_idx.extend_from_slice(cols);
            values.extend_from_slice(vals);
            col_idx.push(i);
            values.push(1.0);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::from_parts_unchecked(n, row_ptr, col_idx, values)
    }

    /// `P = (I + L) D (I + L)ᵀ` as a sparse matrix (Gustavson product).
    pub fn product(&self) -> CsrMatrix {
        let n = self.n();
        let u = self.unit_lower();
        let ut = u.transpose();
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            touched.clear();
            let (ucols, uvals) = u.row(i);
            for (&k, &uik) in ucols.iter().zip(uvals) {
                let s = uik * self.diag[k];
                // row k of Uᵀ lists every j with U[j][k] != 0
                let (tcols, tvals) = ut.row(k);
                for (&j, &ujk) in tcols.iter().zip(tvals) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += s * ujk;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::from_parts_unchecked(n, row_ptr, col_idx, values)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.product().to_dense()
    }

    /// `‖(I + L) D (I + L)ᵀ − A‖_F²` over the union of both sparsity patterns.
    pub fn frobenius_sq_diff(&self, a: &CsrMatrix) -> Result<f64> {
        check_dim(self.n(), a.n())?;
        let p = self.product();
        Ok(squared_difference(&p, a))
    }
}

/// `‖P − A‖_F²` by merging the sorted rows of both operands.
pub(crate) fn squared_difference(p: &CsrMatrix, a: &CsrMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..p.n() {
        merge_rows(p.row(i), a.row(i), |_, pv, av| {
            let d = pv - av;
            total += d * d;
        });
    }
    total
}

/// Walks the union of two sorted sparse rows, calling `f(col, left, right)`
/// with zeros for missing entries.
pub(crate) fn merge_rows(
    (lc, lv): (&[usize], &[f64]),
    (rc, rv): (&[usize], &[f64]),
    mut f: impl FnMut(usize, f64, f64),
) {
    let (mut p, mut q) = (0, 0);
    while p < lc.len() || q < rc.len() {
        if q == rc.len() || (p < lc.len() && lc[p] < rc[q]) {
            f(lc[p], lv[p], 0.0);
            p += 1;
        } else if p == lc.len() || rc[q] < lc[p] {
            f(rc[q], 0.0, rv[q]);
            q += 1;
        } else {
            f(lc[p], lv[p], rv[q]);
            p += 1;
            q += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::dense::dense_cholesky;

    #[test]
    fn diagonal_inverse() {
        let f = LowerFactor::diagonal(vec![2.0, 4.0]).unwrap();
        assert_eq!(f.apply_inverse(&[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        let g = LowerFactor::diagonal(vec![3.0]).unwrap();
        assert_eq!(g.apply_inverse(&[1.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn rejects_nonpositive_diagonal() {
        assert!(matches!(
            LowerFactor::diagonal(vec![1.0, 0.0]),
            Err(Error::NonPositiveDiagonal { row: 1, .. })
        ));
        let upper = CsrMatrix::from_triplets(2, &[(0, 1, 1.0)]).unwrap();
        assert!(LowerFactor::new(upper, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_of_exact_factor_recovers_unit_vector() {
        let a = DenseMatrix::from_row_major(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let f = dense_cholesky(&a).unwrap();
        let r: Vec<f64> = (0..3).map(|i| a[(i, 0)]).collect();
        let z = f.apply_inverse(&r).unwrap();
        for (k, zk) in z.iter().enumerate() {
            let e = if k == 0 { 1.0 } else { 0.0 };
            assert!((zk - e).abs() < 1e-12);
        }
    }

    #[test]
    fn frobenius_examples() {
        let a = CsrMatrix::identity(3);
        assert_eq!(LowerFactor::identity(3).frobenius_sq_diff(&a).unwrap(), 0.0);
        let two = CsrMatrix::from_diagonal(&[2.0, 2.0, 2.0]);
        // elementwise: three diagonal differences of 1
        assert_eq!(LowerFactor::identity(3).frobenius_sq_diff(&two).unwrap(), 3.0);
        assert!(LowerFactor::identity(2).frobenius_sq_diff(&two).is_err());
    }

    #[test]
    fn frobenius_of_exact_factor_is_zero() {
        let a = DenseMatrix::from_row_major(3, 3, vec![4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0]).unwrap();
        let f = dense_cholesky(&a).unwrap();
        let sparse = CsrMatrix::from_dense(&a, 0.0).unwrap();
        assert!(f.frobenius_sq_diff(&sparse).unwrap() < 1e-20);
    }

    #[test]
    fn product_matches_dense_product() {
        let l = CsrMatrix::from_triplets(3, &[(1, 0, 0.5), (2, 0, -0.25), (2, 1, 0.75)]).unwrap();
        let f = LowerFactor::new(l, vec![2.0, 1.0, 3.0]).unwrap();
        let mut u = f.strict_lower().to_dense();
        for i in 0..3 {
            u[(i, i)] = 1.0;
        }
        let mut ud = u.clone();
        for i in 0..3 {
            for j in 0..3 {
                ud[(i, j)] *= f.diag()[j];
            }
        }
        let dense = ud.matmul(&u.transpose()).unwrap();
        let p = f.to_dense();
        for (x, y) in p.as_slice().iter().zip(dense.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        let x = [1.0, -2.0, 0.5];
        let px = f.apply(&x).unwrap();
        let want = dense.matvec(&x).unwrap();
        for (a, b) in px.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
