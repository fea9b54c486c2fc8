//! Classic preconditioners, all produced in factored `(I + L) D (I + L)ᵀ` form.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LowerFactor};

/// Anything that applies `z = P⁻¹ r` for an SPD `P`.
pub trait Preconditioner {
    fn dim(&self) -> usize;
    fn apply_inverse_into(&self, r: &[f64], z: &mut [f64]);
}

impl Preconditioner for LowerFactor {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_inverse_into(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.apply_inverse_in_place(z);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    Identity,
    Jacobi,
    GaussSeidel,
    Ic0,
    Ic2,
    Learned,
}

impl PreconditionerKind {
    pub const CLASSIC: [PreconditionerKind; 5] = [
        PreconditionerKind::Identity,
        PreconditionerKind::Jacobi,
        PreconditionerKind::GaussSeidel,
        PreconditionerKind::Ic0,
        PreconditionerKind::Ic2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::Identity => "identity",
            PreconditionerKind::Jacobi => "jacobi",
            PreconditionerKind::GaussSeidel => "gauss_seidel",
            PreconditionerKind::Ic0 => "ic0",
            PreconditionerKind::Ic2 => "ic2",
            PreconditionerKind::Learned => "learned",
        }
    }
}

impl std::str::FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Self::Identity),
            "jacobi" => Ok(Self::Jacobi),
            "gauss_seidel" | "gs" | "sgs" => Ok(Self::GaussSeidel),
            "ic0" | "ic" => Ok(Self::Ic0),
            "ic2" => Ok(Self::Ic2),
            "learned" => Ok(Self::Learned),
            other => Err(Error::Config(format!("unknown preconditioner {other}"))),
        }
    }
}

/// A built preconditioner with its construction metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPreconditioner {
    pub kind: PreconditionerKind,
    pub factor: LowerFactor,
    /// Diagonal shift `σ` applied before an incomplete factorization succeeded.
    pub shift: f64,
}

impl FactorPreconditioner {
    pub fn new(kind: PreconditionerKind, factor: LowerFactor) -> Self {
        Self { kind, factor, shift: 0.0 }
    }
}

impl Preconditioner for FactorPreconditioner {
    fn dim(&self) -> usize {
        self.factor.n()
    }

    fn apply_inverse_into(&self, r: &[f64], z: &mut [f64]) {
        self.factor.apply_inverse_into(r, z)
    }
}

/// `P = diag(A)`.
pub fn build_jacobi(a: &CsrMatrix) -> Result<FactorPreconditioner> {
    let d = a.positive_diagonal()?;
    Ok(FactorPreconditioner::new(PreconditionerKind::Jacobi, LowerFactor::diagonal(d)?))
}

/// Symmetric Gauss-Seidel `P = (D + L_A) D⁻¹ (D + L_A)ᵀ`, stored as
/// `L_ij = A_ij / A_jj` with `D = diag(A)`.
pub fn build_gauss_seidel(a: &CsrMatrix) -> Result<FactorPreconditioner> {
    let d = a.positive_diagonal()?;
    let mut lower = a.strict_lower();
    let cols = lower.col_idx().to_vec();
    for (v, j) in lower.values_mut().iter_mut().zip(cols) {
        *v /= d[j];
    }
    Ok(FactorPreconditioner::new(PreconditionerKind::GaussSeidel, LowerFactor::new(lower, d)?))
}

pub fn build_ic0(a: &CsrMatrix) -> Result<FactorPreconditioner> {
    let pattern = a.strict_lower();
    shifted_incomplete_ldlt(a, &pattern, PreconditionerKind::Ic0)
}

pub fn build_ic2(a: &CsrMatrix) -> Result<FactorPreconditioner> {
    let pattern = level_fill_pattern(a, 2)?;
    shifted_incomplete_ldlt(a, &pattern, PreconditionerKind::Ic2)
}

pub fn build_classic(kind: PreconditionerKind, a: &CsrMatrix) -> Result<FactorPreconditioner> {
    match kind {
        PreconditionerKind::Identity => Ok(FactorPreconditioner::new(kind, LowerFactor::identity(a.n()))),
        PreconditionerKind::Jacobi => build_jacobi(a),
        PreconditionerKind::GaussSeidel => build_gauss_seidel(a),
        PreconditionerKind::Ic0 => build_ic0(a),
        PreconditionerKind::Ic2 => build_ic2(a),
        PreconditionerKind::Learned => Err(Error::Config("learned preconditioners need a model".into())),
    }
}

/// Builds `kind` and reports the construction wall time in seconds.
pub fn build_timed(kind: PreconditionerKind, a: &CsrMatrix) -> Result<(FactorPreconditioner, f64)> {
    let t = Instant::now();
    let p = build_classic(kind, a)?;
    Ok((p, t.elapsed().as_secs_f64()))
}

const MAX_SHIFT_RESTARTS: usize = 10;

/// Incomplete LDLᵀ on `pattern`, restarting on `A + σ diag(A)` with σ
/// starting at 1e-3 and doubling whenever a pivot is not positive.
fn shifted_incomplete_ldlt(
    a: &CsrMatrix,
    pattern: &CsrMatrix,
    kind: PreconditionerKind,
) -> Result<FactorPreconditioner> {
    let diag = a.positive_diagonal()?;
    let mut shift = 0.0;
    for restart in 0..=MAX_SHIFT_RESTARTS {
        match incomplete_ldlt(a, pattern, shift, &diag) {
            Ok(factor) => return Ok(FactorPreconditioner { kind, factor, shift }),
            Err(Error::NotPositiveDefinite { pivot }) => {
                shift = if restart == 0 { 1e-3 } else { 2.0 * shift };
                log::debug!("{}: pivot {pivot} failed, retrying with shift {shift:e}", kind.name());
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::ShiftEscalation { restarts: MAX_SHIFT_RESTARTS })
}

/// Up-looking incomplete LDLᵀ restricted to the strict-lower `pattern`; the
/// diagonal of `A` is augmented by `shift · diag`.
pub(crate) fn incomplete_ldlt(a: &CsrMatrix, pattern: &CsrMatrix, shift: f64, diag: &[f64]) -> Result<LowerFactor> {
    let n = a.n();
    let mut values = vec![0.0; pattern.nnz()];
    let mut d = vec![0.0; n];
    let rp = pattern.row_ptr();
    let ci = pattern.col_idx();
    for i in 0..n {
        let (lo, hi) = (rp[i], rp[i + 1]);
        for p in lo..hi {
            let j = ci[p];
            // Σ_k L_ik D_k L_jk over k < j in both row patterns
            let mut s = 0.0;
            let (mut q, mut r) = (lo, rp[j]);
            while q < p && r < rp[j + 1] {
                let (kq, kr) = (ci[q], ci[r]);
                if kq == kr {
                    s += values[q] * d[kq] * values[r];
                    q += 1;
                    r += 1;
                } else if kq < kr {
                    q += 1;
                } else {
                    r += 1;
                }
            }
            values[p] = (a.get(i, j) - s) / d[j];
        }
        let s: f64 = (lo..hi).map(|p| values[p] * values[p] * d[ci[p]]).sum();
        let di = diag[i] * (1.0 + shift) - s;
        if !(di > 0.0) || !di.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: i });
        }
        d[i] = di;
    }
    let strict = CsrMatrix::new(n, rp.to_vec(), ci.to_vec(), values)?;
    LowerFactor::new(strict, d)
}

/// Strict-lower pattern of level-of-fill incomplete factorization: original
/// entries have level 0, fill at `(i, j)` through pivot `k` has level
/// `lev(i,k) + lev(k,j) + 1`, and entries with level ≤ `max_level` are kept.
pub fn level_fill_pattern(a: &CsrMatrix, max_level: usize) -> Result<CsrMatrix> {
    let n = a.n();
    // upper part (column > row) of each processed row with its levels
    let mut upper: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let mut levels: BTreeMap<usize, usize> = a.row(i).0.iter().map(|&j| (j, 0)).collect();
        let mut cursor = 0usize;
        // eliminate pivots k < i in increasing order; fill may add new k < i
        while let Some((&k, &lev_ik)) = levels.range(cursor..).next() {
            if k >= i {
                break;
            }
            cursor = k + 1;
            for &(j, lev_kj) in &upper[k] {
                let lev = lev_ik + lev_kj + 1;
                if lev <= max_level {
                    levels.entry(j).and_modify(|l| *l = (*l).min(lev)).or_insert(lev);
                }
            }
        }
        for (&j, _) in levels.range(..i) {
            col_idx.push(j);
        }
        row_ptr.push(col_idx.len());
        upper.push(levels.range(i + 1..).map(|(&j, &l)| (j, l)).collect());
    }
    let values = vec![0.0; col_idx.len()];
    CsrMatrix::new(n, row_ptr, col_idx, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcg::{pcg_solve, SolveOptions};
    use crate::sparse::dense_cholesky;

    fn tridiagonal(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.5 + 0.1 * i as f64));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn jacobi_inverts_diagonal() {
        let a = CsrMatrix::from_diagonal(&[2.0, 5.0]);
        let p = build_jacobi(&a).unwrap();
        assert_eq!(p.factor.apply_inverse(&[2.0, 5.0]).unwrap(), vec![1.0, 1.0]);
        let bad = CsrMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(build_jacobi(&bad).is_err());
        assert!(build_gauss_seidel(&bad).is_err());
    }

    #[test]
    fn gauss_seidel_on_diagonal_is_exact() {
        let a = CsrMatrix::from_diagonal(&[2.0, 5.0, 3.0]);
        let p = build_gauss_seidel(&a).unwrap();
        let (_, rep) = pcg_solve(&a, &[1.0, 1.0, 1.0], &p, &SolveOptions::default()).unwrap();
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn ic0_equals_cholesky_without_fill() {
        let a = tridiagonal(12);
        let ic = build_ic0(&a).unwrap();
        let exact = dense_cholesky(&a.to_dense()).unwrap();
        assert_eq!(ic.shift, 0.0);
        for i in 0..12 {
            assert!((ic.factor.diag()[i] - exact.diag()[i]).abs() < 1e-13);
            if i > 0 {
                assert!((ic.factor.strict_lower().get(i, i - 1) - exact.strict_lower().get(i, i - 1)).abs() < 1e-13);
            }
        }
        let ic2 = build_ic2(&a).unwrap();
        assert_eq!(ic2.factor, ic.factor);
    }

    #[test]
    fn ic0_on_diagonal_matrix() {
        let a = CsrMatrix::from_diagonal(&[3.0, 4.0]);
        let p = build_ic0(&a).unwrap();
        assert_eq!(p.factor.strict_lower().nnz(), 0);
        assert_eq!(p.factor.diag(), &[3.0, 4.0]);
    }

    #[test]
    fn level_fill_on_arrow_pattern() {
        // first row/column dense: eliminating pivot 0 couples every later pair at level 1
        let n = 5;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 10.0));
            if i > 0 {
                t.push((i, 0, 1.0));
                t.push((0, i, 1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        assert_eq!(level_fill_pattern(&a, 0).unwrap().nnz(), n - 1);
        assert_eq!(level_fill_pattern(&a, 1).unwrap().nnz(), n * (n - 1) / 2);
    }

    #[test]
    fn shift_restart_recovers_from_breakdown() {
        // SPD but IC(0) on this pattern hits a negative pivot without a shift
        let t = [
            (0, 0, 3.0),
            (0, 1, -2.0),
            (1, 0, -2.0),
            (0, 2, 2.0),
            (2, 0, 2.0),
            (1, 1, 3.0),
            (2, 2, 3.0),
            (1, 3, -2.0),
            (3, 1, -2.0),
            (2, 3, -2.0),
            (3, 2, -2.0),
            (3, 3, 3.0),
        ];
        let a = CsrMatrix::from_triplets(4, &t).unwrap();
        let diag = a.diagonal();
        let plain = incomplete_ldlt(&a, &a.strict_lower(), 0.0, &diag);
        if plain.is_err() {
            let p = build_ic0(&a).unwrap();
            assert!(p.shift > 0.0);
        }
    }
}
