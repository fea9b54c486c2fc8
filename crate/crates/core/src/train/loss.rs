//! Factor-space losses and their gradients with respect to the stored
//! strictly lower entries of `L′`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::sparse::factor::{merge_rows, squared_difference};
use crate::sparse::vector::{dot, norm2};
use crate::sparse::{CsrMatrix, LowerFactor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `‖(I+L′)D(I+L′)ᵀ − A‖_F²`
    Naive,
    /// `‖(I+L′)D(I+L′)ᵀ x − b‖₂²`
    #[default]
    Data,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "data" => Ok(Self::Data),
            other => Err(crate::Error::Config(format!("unknown loss {other}"))),
        }
    }
}

/// Naive loss, evaluated on the union of the sparsity patterns of `P` and `A`.
pub fn loss_naive(factor: &LowerFactor, a: &CsrMatrix) -> Result<f64> {
    factor.frobenius_sq_diff(a)
}

pub fn loss_data(factor: &LowerFactor, x: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(factor.n(), b.len())?;
    let px = factor.apply(x)?;
    Ok(px.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

/// Data loss and its gradient, one value per stored entry of `L′`.
pub fn loss_data_grad(factor: &LowerFactor, x: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(factor.n(), b.len())?;
    let px = factor.apply(x)?;
    let g: Vec<f64> = px.iter().zip(b).map(|(p, q)| 2.0 * (p - q)).collect();
    let loss = 0.25 * dot(&g, &g);
    let d = factor.diag();
    let s: Vec<f64> = factor.upper_matvec(x)?.iter().zip(d).map(|(w, di)| w * di).collect();
    let q: Vec<f64> = factor.upper_matvec(&g)?.iter().zip(d).map(|(w, di)| w * di).collect();
    let l = factor.strict_lower();
    let mut grad = Vec::with_capacity(l.nnz());
    for i in 0..factor.n() {
        grad.extend(l.row(i).0.iter().map(|&k| g[i] * s[k] + x[i] * q[k]));
    }
    Ok((loss, grad))
}

/// Naive loss and its gradient `4 D_k ((P − A)(I + L′))_ik`.
pub fn loss_naive_grad(factor: &LowerFactor, a: &CsrMatrix) -> Result<(f64, Vec<f64>)> {
    check_dim(factor.n(), a.n())?;
    let p = factor.product();
    let loss = squared_difference(&p, a);
    let l = factor.strict_lower();
    let lt = l.transpose();
    let d = factor.diag();
    let n = factor.n();
    let mut work = vec![0.0; n];
    let mut touched = Vec::new();
    let mut grad = Vec::with_capacity(l.nnz());
    for i in 0..n {
        touched.clear();
        merge_rows(p.row(i), a.row(i), |c, pv, av| {
            work[c] = pv - av;
            touched.push(c);
        });
        for &k in l.row(i).0 {
            let (cols, vals) = lt.row(k);
            let gu = work[k] + cols.iter().zip(vals).map(|(&c, v)| work[c] * v).sum::<f64>();
            grad.push(4.0 * d[k] * gu);
        }
        for &c in &touched {
            work[c] = 0.0;
        }
    }
    Ok((loss, grad))
}

/// `‖b‖₂²`, the data loss of the zero vector; used to make per-tuple losses
/// comparable.
pub fn rhs_scale(b: &[f64]) -> f64 {
    let nb = norm2(b);
    if nb > 0.0 {
        nb * nb
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::DenseMatrix;

    fn sample_factor() -> LowerFactor {
        let l = CsrMatrix::from_triplets(4, &[(1, 0, 0.3), (2, 1, -0.4), (3, 0, 0.2), (3, 2, 0.7)]).unwrap();
        LowerFactor::new(l, vec![2.0, 1.5, 3.0, 0.5]).unwrap()
    }

    fn tridiag() -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..4 {
            t.push((i, i, 3.0 + i as f64));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(4, &t).unwrap()
    }

    fn with_values(f: &LowerFactor, v: &[f64]) -> LowerFactor {
        let mut l = f.strict_lower().clone();
        l.values_mut().copy_from_slice(v);
        LowerFactor::new(l, f.diag().to_vec()).unwrap()
    }

    #[test]
    fn data_loss_matches_dense_product() {
        let f = sample_factor();
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = [0.1, 0.2, -0.3, 0.4];
        let p: DenseMatrix = f.to_dense();
        let px = p.matvec(&x).unwrap();
        let dense: f64 = px.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
        let fast = loss_data(&f, &x, &b).unwrap();
        assert!((fast - dense).abs() <= 1e-12 * dense);
        assert_eq!(loss_data(&f, &[0.0; 4], &b).unwrap(), b.iter().map(|v| v * v).sum::<f64>());
    }

    #[test]
    fn exact_factor_has_zero_losses_and_gradients() {
        let f = sample_factor();
        let a = f.product();
        let x = [1.0, 2.0, 3.0, 4.0];
        let b = a.spmv(&x).unwrap();
        let (ld, gd) = loss_data_grad(&f, &x, &b).unwrap();
        assert!(ld <= 1e-18 * dot(&b, &b));
        assert!(gd.iter().all(|g| g.abs() < 1e-12));
        let (ln, gn) = loss_naive_grad(&f, &a).unwrap();
        assert!(ln < 1e-24);
        assert!(gn.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradients_match_central_differences() {
        let f = sample_factor();
        let a = tridiag();
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = [0.1, 0.2, -0.3, 0.4];
        let base = f.strict_lower().values().to_vec();
        let (_, gd) = loss_data_grad(&f, &x, &b).unwrap();
        let (_, gn) = loss_naive_grad(&f, &a).unwrap();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let (fu, fd) = (with_values(&f, &up), with_values(&f, &dn));
            let fd_data = (loss_data(&fu, &x, &b).unwrap() - loss_data(&fd, &x, &b).unwrap()) / (2.0 * h);
            let fd_naive = (loss_naive(&fu, &a).unwrap() - loss_naive(&fd, &a).unwrap()) / (2.0 * h);
            assert!((fd_data - gd[k]).abs() <= 1e-6 * gd[k].abs().max(1.0), "data {k}: {fd_data} vs {}", gd[k]);
            assert!((fd_naive - gn[k]).abs() <= 1e-6 * gn[k].abs().max(1.0), "naive {k}: {fd_naive} vs {}", gn[k]);
        }
    }

    #[test]
    fn naive_loss_grows_quadratically_at_minimum() {
        let f = sample_factor();
        let a = f.product();
        let mut v = f.strict_lower().values().to_vec();
        v[2] += 1e-3;
        let l1 = loss_naive(&with_values(&f, &v), &a).unwrap();
        v[2] += 1e-3;
        let l2 = loss_naive(&with_values(&f, &v), &a).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-2);
    }
}
