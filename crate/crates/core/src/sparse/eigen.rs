//! Symmetric eigenvalues by cyclic Jacobi rotations.
//!
//! Each sweep visits every off-diagonal pair once. Pairs are grouped into
//! rounds of disjoint rotations (round-robin ordering), so a round is applied
//! as one pass of row updates followed by one pass of column updates, both
//! walking contiguous memory.

use crate::error::{check_dim, Error, Result};
use crate::sparse::csr::CsrMatrix;
use crate::sparse::dense::{DenseMatrix, DENSE_LIMIT};

const MAX_SWEEPS: usize = 60;

/// Eigenvalues of a dense symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_dim(a.rows(), a.cols())?;
    let n = a.rows();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    if let Some(k) = a.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "eigen input", index: k });
    }
    let mut m = a.clone();
    let data = m.as_mut_slice();
    let rounds = round_robin(n);
    let total_sq: f64 = data.iter().map(|v| v * v).sum();
    let tol = (f64::EPSILON * f64::EPSILON) * total_sq;

    let mut rot: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(n / 2 + 1);
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_sq(data, n) <= tol {
            break;
        }
        for round in &rounds {
            rot.clear();
            for &(p, q) in round {
                let apq = data[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = data[p * n + p];
                let aqq = data[q * n + q];
                // negligible relative to both diagonal entries
                if apq.abs() <= 1e-18 * (app.abs() * aqq.abs()).sqrt() {
                    data[p * n + q] = 0.0;
                    data[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                rot.push((p, q, c, t * c));
            }
            if rot.is_empty() {
                continue;
            }
            // rows: A <- Jᵀ A
            for &(p, q, c, s) in &rot {
                let (lo, hi) = data.split_at_mut(q * n);
                let rp = &mut lo[p * n..p * n + n];
                let rq = &mut hi[..n];
                for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                    let (ap, aq) = (*x, *y);
                    *x = c * ap - s * aq;
                    *y = s * ap + c * aq;
                }
            }
            // columns: A <- A J
            for row in data.chunks_exact_mut(n) {
                for &(p, q, c, s) in &rot {
                    let (ap, aq) = (row[p], row[q]);
                    row[p] = c * ap - s * aq;
                    row[q] = s * ap + c * aq;
                }
            }
            for &(p, q, _, _) in &rot {
                data[p * n + q] = 0.0;
                data[q * n + p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| data[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

fn off_diagonal_sq(data: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += data[i * n + j] * data[i * n + j];
            }
        }
    }
    s
}

/// Circle-method schedule: every pair `p < q` appears exactly once, and the
/// pairs inside one round are disjoint.
fn round_robin(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n < 2 {
        return Vec::new();
    }
    let m = n + n % 2;
    let mut players: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for _ in 0..m - 1 {
        let mut round = Vec::with_capacity(m / 2);
        for k in 0..m / 2 {
            let (a, b) = (players[k], players[m - 1 - k]);
            if a < n && b < n {
                round.push((a.min(b), a.max(b)));
            }
        }
        rounds.push(round);
        let last = players.pop().unwrap();
        players.insert(1, last);
    }
    rounds
}

/// `λ_max / λ_min` of a symmetric sparse matrix through a dense eigensolve.
pub fn condition_number_dense(a: &CsrMatrix) -> Result<f64> {
    if a.n() > DENSE_LIMIT {
        return Err(Error::TooLarge { n: a.n(), limit: DENSE_LIMIT });
    }
    condition_number_of(&a.to_dense())
}

pub(crate) fn condition_number_of(a: &DenseMatrix) -> Result<f64> {
    let eig = symmetric_eigenvalues(a)?;
    let (lo, hi) = match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::InvalidMatrix("empty matrix".into())),
    };
    if lo <= 0.0 {
        let pivot = eig.iter().position(|&v| v > 0.0).unwrap_or(eig.len());
        return Err(Error::NotPositiveDefinite { pivot: pivot.saturating_sub(1) });
    }
    Ok(hi / lo)
}
