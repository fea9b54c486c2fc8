//! Preconditioned conjugate gradient with per-threshold convergence records.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::precond::Preconditioner;
use crate::sparse::vector::{axpy, dot, norm2};
use crate::sparse::CsrMatrix;

pub const DEFAULT_THRESHOLDS: [f64; 6] = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `‖r_k‖₂ / ‖b‖₂`
    #[default]
    Relative,
    /// `‖r_k‖₂`
    Absolute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub thresholds: Vec<f64>,
    /// Defaults to `10 n`.
    pub max_iter: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub mode: ResidualMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS.to_vec(), max_iter: None, x0: None, mode: ResidualMode::Relative }
    }
}

impl SolveOptions {
    pub fn with_thresholds(thresholds: &[f64]) -> Self {
        Self { thresholds: thresholds.to_vec(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("thresholds must be strictly decreasing".into()));
        }
        if self.mode == ResidualMode::Relative && self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("relative thresholds must lie in (0, 1)".into()));
        }
        if self.mode == ResidualMode::Absolute && self.thresholds.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("absolute thresholds must be positive".into()));
        }
        if self.max_iter == Some(0) {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// First iteration at which the residual measure dropped to `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub iterations: Option<usize>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub hits: Vec<ThresholdHit>,
    pub iterations: usize,
    pub converged: bool,
    /// Residual measure of the last recursive residual.
    pub final_residual: f64,
    /// Residual measure of `b − A x` recomputed from the returned iterate.
    pub true_residual: f64,
    /// `‖r_k‖₂` for `k = 0..=iterations`.
    pub history: Vec<f64>,
}

impl SolveReport {
    pub fn iterations_at(&self, threshold: f64) -> Option<usize> {
        self.hits.iter().find(|h| h.threshold == threshold).and_then(|h| h.iterations)
    }
}

/// Solves `A x = b` with preconditioner `p`.
///
/// Stops when the residual measure reaches the smallest threshold or after
/// `max_iter` iterations; in the latter case the last iterate is returned
/// with `converged = false`.
pub fn pcg_solve<P: Preconditioner + ?Sized>(
    a: &CsrMatrix,
    b: &[f64],
    p: &P,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    let n = a.n();
    check_dim(n, b.len())?;
    check_dim(n, p.dim())?;
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let start = Instant::now();

    let b_norm = norm2(b);
    let scale = match opts.mode {
        ResidualMode::Relative => b_norm,
        ResidualMode::Absolute => 1.0,
    };
    let mut hits: Vec<ThresholdHit> =
        opts.thresholds.iter().map(|&t| ThresholdHit { threshold: t, iterations: None, seconds: None }).collect();

    if b_norm == 0.0 {
        for h in &mut hits {
            h.iterations = Some(0);
            h.seconds = Some(start.elapsed().as_secs_f64());
        }
        let report = SolveReport {
            hits,
            iterations: 0,
            converged: true,
            final_residual: 0.0,
            true_residual: 0.0,
            history: vec![0.0],
        };
        return Ok((vec![0.0; n], report));
    }

    let mut x = match &opts.x0 {
        Some(x0) => {
            check_dim(n, x0.len())?;
            x0.clone()
        }
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if opts.x0.is_some() {
        let ax = a.spmv(&x)?;
        for (ri, axi) in r.iter_mut().zip(&ax) {
            *ri -= axi;
        }
    }
    let mut z = r.clone();
    let mut w = vec![0.0; n];

    let mut r_norm = norm2(&r);
    let mut history = vec![r_norm];
    let smallest = *opts.thresholds.last().unwrap();
    let record = |k: usize, measure: f64, hits: &mut [ThresholdHit]| {
        for h in hits.iter_mut().filter(|h| h.iterations.is_none() && measure <= h.threshold) {
            h.iterations = Some(k);
            h.seconds = Some(start.elapsed().as_secs_f64());
        }
    };
    record(0, r_norm / scale, &mut hits);

    let mut k = 0;
    if r_norm / scale > smallest {
        p.apply_inverse_into(&r, &mut z);
        let mut rz = dot(&r, &z);
        let mut dir = z.clone();
        while k < max_iter {
            if !(rz > 0.0) {
                return Err(Error::Breakdown { iteration: k, reason: "rᵀz is not positive; preconditioner is not SPD" });
            }
            a.spmv_into(&dir, &mut w)?;
            let curvature = dot(&dir, &w);
            if !(curvature > 0.0) {
                return Err(Error::Breakdown { iteration: k, reason: "pᵀAp is not positive; matrix is not SPD" });
            }
            let alpha = rz / curvature;
            axpy(alpha, &dir, &mut x);
            axpy(-alpha, &w, &mut r);
            k += 1;
            r_norm = norm2(&r);
            history.push(r_norm);
            record(k, r_norm / scale, &mut hits);
            if r_norm / scale <= smallest {
                break;
            }
            p.apply_inverse_into(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for (d, zi) in dir.iter_mut().zip(&z) {
                *d = zi + beta * *d;
            }
        }
    }

    let ax = a.spmv(&x)?;
    let true_norm = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum::<f64>().sqrt();
    let final_residual = r_norm / scale;
    let report = SolveReport {
        hits,
        iterations: k,
        converged: final_residual <= smallest,
        final_residual,
        true_residual: true_norm / scale,
        history,
    };
    Ok((x, report))
}
