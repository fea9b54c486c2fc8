use crate::error::{check_dim, Error, Result};
use crate::sparse::dense::DenseMatrix;

/// Square sparse matrix in compressed sparse row form.
///
/// Column indices are strictly increasing within each row. Symmetric
/// matrices store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != n + 1 {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                n + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::InvalidMatrix("row_ptr does not bracket the entry arrays".into()));
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::InvalidMatrix(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.iter().any(|&c| c >= n) {
                return Err(Error::InvalidMatrix(format!("column index out of range in row {i}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!("columns not strictly increasing in row {i}")));
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix values", index: k });
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    pub(crate) fn from_parts_unchecked(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        Self { n, row_ptr, col_idx, values }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order, so two entries fed in the same order sum identically.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::InvalidMatrix(format!("triplet ({i}, {j}) outside {n}x{n}")));
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // stable: keeps insertion order among duplicates
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (i, j, v) = triplets[k];
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Empty matrix with no stored entries.
    pub fn zeros(n: usize) -> Self {
        Self { n, row_ptr: vec![0; n + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Keeps entries whose magnitude exceeds `drop_below`.
    pub fn from_dense(dense: &DenseMatrix, drop_below: f64) -> Result<Self> {
        check_dim(dense.rows(), dense.cols())?;
        let n = dense.rows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = dense[(i, j)];
                if v.abs() > drop_below {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of `(i, j)` in the entry arrays, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Diagonal entries, failing if any is missing or nonpositive.
    pub fn positive_diagonal(&self) -> Result<Vec<f64>> {
        (0..self.n)
            .map(|i| match self.position(i, i) {
                None => Err(Error::MissingDiagonal { row: i }),
                Some(k) if self.values[k] > 0.0 => Ok(self.values[k]),
                Some(k) => Err(Error::NonPositiveDiagonal { row: i, value: self.values[k] }),
            })
            .collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_dim(self.n, x.len())?;
        check_dim(self.n, y.len())?;
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
        Ok(())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.n {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let dst = next[j];
                col_idx[dst] = i;
                values[dst] = v;
                next[j] += 1;
            }
        }
        CsrMatrix { n: self.n, row_ptr, col_idx, values }
    }

    /// Exact structural and value symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.position(j, i).is_some_and(|k| self.values[k] == v))
        })
    }

    /// Entries strictly below the diagonal.
    pub fn strict_lower(&self) -> CsrMatrix {
        self.filter(|i, j| j < i)
    }

    /// Entries on or below the diagonal.
    pub fn lower(&self) -> CsrMatrix {
        self.filter(|i, j| j <= i)
    }

    fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: self.n, row_ptr, col_idx, values }
    }

    /// `self + alpha * other` for matrices sharing one sparsity pattern.
    pub fn add_scaled_same_pattern(&self, alpha: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        check_dim(self.n, other.n)?;
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(Error::InvalidMatrix("sparsity patterns differ".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(CsrMatrix { values, ..self.clone() })
    }

    /// Principal submatrix on `keep`: new index `k` is old index `keep[k]`.
    /// Indices must be distinct.
    pub fn principal_submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut new_index = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            new_index[i] = k;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut row = Vec::new();
        row_ptr.push(0);
        for &i in keep {
            let (cols, vals) = self.row(i);
            row.clear();
            row.extend(cols.iter().zip(vals).filter(|(&j, _)| new_index[j] != usize::MAX).map(|(&j, &v)| (new_index[j], v)));
            row.sort_unstable_by_key(|e| e.0);
            for &(j, v) in &row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: keep.len(), row_ptr, col_idx, values }
    }

    /// Symmetric permutation: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permute(&self, perm: &[usize]) -> Result<CsrMatrix> {
        check_dim(self.n, perm.len())?;
        let triplets: Vec<_> = (0..self.n)
            .flat_map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(move |(&j, &v)| (perm[i], perm[j], v))
            })
            .collect();
        CsrMatrix::from_triplets(self.n, &triplets)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmv_identity_and_zero() {
        let i3 = CsrMatrix::identity(3);
        assert_eq!(i3.spmv(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let z = CsrMatrix::zeros(3);
        assert_eq!(z.spmv(&[4.0, 5.0, 6.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn spmv_small_dense() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(a.spmv(&[1.0]), Err(Error::DimensionMismatch { expected: 3, found: 1 })));
    }

    #[test]
    fn rejects_bad_structure() {
        assert!(CsrMatrix::new(2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, &[(1, 0, 1.0), (0, 0, 2.0), (1, 0, 0.5)]).unwrap();
        assert_eq!(a.get(1, 0), 1.5);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn transpose_and_symmetry() {
        let a = CsrMatrix::from_triplets(3, &[(0, 1, 2.0), (2, 0, 3.0), (1, 1, 1.0)]).unwrap();
        let t = a.transpose();
        assert_eq!(t.get(1, 0), 2.0);
        assert_eq!(t.get(0, 2), 3.0);
        assert!(!a.is_symmetric());
        let s = CsrMatrix::from_triplets(2, &[(0, 1, 2.0), (1, 0, 2.0)]).unwrap();
        assert!(s.is_symmetric());
    }

    #[test]
    fn submatrix_and_permute() {
        let a = CsrMatrix::from_triplets(
            3,
            &[(0, 0, 1.0), (0, 2, 5.0), (1, 1, 2.0), (2, 0, 5.0), (2, 2, 3.0)],
        )
        .unwrap();
        let s = a.principal_submatrix(&[0, 2]);
        assert_eq!(s.to_dense().as_slice(), &[1.0, 5.0, 5.0, 3.0]);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.get(2, 1), 5.0);
        assert_eq!(p.get(0, 0), 2.0);
    }
}
