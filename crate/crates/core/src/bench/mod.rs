//! Benchmark harness: iterations and time to each threshold, precompute
//! time, condition numbers, and generalization sweeps.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::{generate_dataset, DatasetConfig, DatasetTuple};
use crate::gnn::{build_learned, energy_scaled_start, graph_from_system, predict_x0, GnnModel};
use crate::pcg::{pcg_solve, SolveOptions, DEFAULT_THRESHOLDS};
use crate::precond::{build_classic, FactorPreconditioner, PreconditionerKind};
use crate::sparse::eigen::symmetric_eigenvalues;
use crate::sparse::{CsrMatrix, DenseMatrix, LowerFactor};

/// Largest dimension for which condition numbers are computed.
pub const KAPPA_LIMIT: usize = 1500;

/// Dense `S = D^{-1/2} (I+L)⁻¹ A (I+L)⁻ᵀ D^{-1/2}`, which is similar to
/// `P⁻¹ A`.
pub fn preconditioned_operator(factor: &LowerFactor, a: &CsrMatrix) -> Result<DenseMatrix> {
    let n = a.n();
    check_dim(n, factor.n())?;
    if n > KAPPA_LIMIT {
        return Err(Error::TooLarge { n, limit: KAPPA_LIMIT });
    }
    let dense = a.to_dense();
    // rows of Y are the columns of (I+L)⁻¹ A, since A is symmetric
    let mut y = vec![0.0; n * n];
    for j in 0..n {
        let mut col = dense.row(j).to_vec();
        factor.solve_unit_lower_in_place(&mut col);
        y[j * n..(j + 1) * n].copy_from_slice(&col);
    }
    let inv_sqrt: Vec<f64> = factor.diag().iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut s = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = y[i * n + j];
        }
        factor.solve_unit_lower_in_place(&mut col);
        for i in 0..n {
            s[i * n + j] = col[i] * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (s[i * n + j] + s[j * n + i]);
            s[i * n + j] = avg;
            s[j * n + i] = avg;
        }
    }
    DenseMatrix::from_row_major(n, n, s)
}

/// Ascending eigenvalues of the preconditioned operator.
pub fn preconditioned_spectrum(p: &FactorPreconditioner, a: &CsrMatrix) -> Result<Vec<f64>> {
    symmetric_eigenvalues(&preconditioned_operator(&p.factor, a)?)
}

pub fn preconditioned_condition_number(p: &FactorPreconditioner, a: &CsrMatrix) -> Result<f64> {
    let ev = preconditioned_spectrum(p, a)?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    Ok(hi / lo)
}

/// A preconditioner under test.
#[derive(Clone, Debug)]
pub enum Method {
    Classic(PreconditionerKind),
    /// Learned factor; `x0` starts PCG from the predicted solution.
    Learned { model: Arc<GnnModel>, x0: bool },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Classic(k) => k.name().to_string(),
            Method::Learned { x0: false, .. } => "learned".into(),
            Method::Learned { x0: true, .. } => "learned+x0".into(),
        }
    }

    /// Builds the preconditioner and the starting vector for one system.
    pub fn prepare(&self, a: &CsrMatrix, b: &[f64]) -> Result<(FactorPreconditioner, Option<Vec<f64>>)> {
        match self {
            Method::Classic(k) => Ok((build_classic(*k, a)?, None)),
            Method::Learned { model, x0 } => {
                let p = build_learned(model, a, b)?;
                let start = if *x0 {
                    let x_hat = predict_x0(model, &graph_from_system(a, b)?)?;
                    Some(energy_scaled_start(a, b, &x_hat)?)
                } else {
                    None
                };
                Ok((p, start))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub thresholds: Vec<f64>,
    /// Timings keep the fastest of this many runs.
    pub repeats: usize,
    pub kappa: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS.to_vec(), repeats: 5, kappa: false, threads: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub seconds: Option<f64>,
    pub iterations: Option<usize>,
}

/// One method on one system, or an aggregate when `instance` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub task: String,
    pub instance: Option<usize>,
    pub method: String,
    pub precompute_seconds: f64,
    pub thresholds: Vec<ThresholdResult>,
    pub kappa_original: Option<f64>,
    pub kappa_preconditioned: Option<f64>,
}

impl BenchmarkRecord {
    /// Reached the smallest threshold.
    pub fn converged(&self) -> bool {
        self.thresholds.last().is_some_and(|t| t.iterations.is_some())
    }

    pub fn iterations_at(&self, threshold: f64) -> Option<usize> {
        self.thresholds.iter().find(|t| t.threshold == threshold).and_then(|t| t.iterations)
    }
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        out.get_or_insert(v);
    }
    Ok((out.unwrap(), best))
}

/// Benchmarks one method on one system.
pub fn benchmark_one(
    task: &str,
    instance: Option<usize>,
    a: &CsrMatrix,
    b: &[f64],
    method: &Method,
    opts: &BenchOptions,
) -> Result<BenchmarkRecord> {
    let ((p, start), precompute) = best_of(opts.repeats, || method.prepare(a, b))?;
    let solve_opts = SolveOptions { thresholds: opts.thresholds.clone(), x0: start, ..SolveOptions::default() };
    let mut thresholds: Vec<ThresholdResult> = Vec::new();
    for rep in 0..opts.repeats.max(1) {
        let (_, report) = pcg_solve(a, b, &p, &solve_opts)?;
        if rep == 0 {
            thresholds = report
                .hits
                .iter()
                .map(|h| ThresholdResult { threshold: h.threshold, seconds: h.seconds, iterations: h.iterations })
                .collect();
        } else {
            for (t, h) in thresholds.iter_mut().zip(&report.hits) {
                if let (Some(s), Some(new)) = (t.seconds, h.seconds) {
                    t.seconds = Some(s.min(new));
                }
            }
        }
    }
    for t in &mut thresholds {
        if let Some(s) = t.seconds.as_mut() {
            *s += precompute;
        }
    }
    let (kappa_original, kappa_preconditioned) = if opts.kappa && a.n() <= KAPPA_LIMIT {
        (Some(crate::sparse::condition_number_dense(a)?), Some(preconditioned_condition_number(&p, a)?))
    } else {
        (None, None)
    };
    Ok(BenchmarkRecord {
        task: task.to_string(),
        instance,
        method: method.name(),
        precompute_seconds: precompute,
        thresholds,
        kappa_original,
        kappa_preconditioned,
    })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every method on every tuple. Tuples run in parallel; records come
/// back ordered by tuple, then by method.
pub fn run_benchmark(
    task: &str,
    tuples: &[&DatasetTuple],
    methods: &[Method],
    opts: &BenchOptions,
) -> Result<Vec<BenchmarkRecord>> {
    let rows: Vec<Result<Vec<BenchmarkRecord>>> = in_pool(opts.threads, || {
        tuples
            .par_iter()
            .map(|t| {
                methods
                    .iter()
                    .map(|m| benchmark_one(task, Some(t.meta.id), &t.a, &t.b, m, opts))
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    })?;
    let mut out = Vec::with_capacity(tuples.len() * methods.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Benchmarks `methods` on the held-out split of datasets generated at each
/// parameter shift (in training standard deviations).
pub fn generalization_sweep(
    base: &DatasetConfig,
    shifts: &[f64],
    methods: &[Method],
    opts: &BenchOptions,
) -> Result<Vec<(f64, Vec<BenchmarkRecord>)>> {
    shifts
        .iter()
        .map(|&s| {
            let cfg = base.shifted(s);
            let ds = generate_dataset(&cfg)?;
            let task = format!("{}@{s}sigma", base.name);
            Ok((s, run_benchmark(&task, &ds.test_tuples(), methods, opts)?))
        })
        .collect()
}

pub fn median_f64(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

/// Median over instances; a non-converged instance counts as slower than
/// every converged one.
pub fn median_iterations(records: &[&BenchmarkRecord], threshold: f64) -> Option<f64> {
    let mut v: Vec<f64> =
        records.iter().map(|r| r.iterations_at(threshold).map_or(f64::INFINITY, |i| i as f64)).collect();
    median_f64(&mut v).filter(|m| m.is_finite())
}

/// Aggregate per `(task, method)` with median timings, iterations and
/// condition numbers.
pub fn summarize(records: &[BenchmarkRecord]) -> Vec<BenchmarkRecord> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (r.task.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(task, method)| {
            let group: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.task == task && r.method == method).collect();
            let med = |f: &dyn Fn(&BenchmarkRecord) -> Option<f64>| {
                let mut v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                median_f64(&mut v)
            };
            let thresholds = group[0]
                .thresholds
                .iter()
                .map(|t| ThresholdResult {
                    threshold: t.threshold,
                    seconds: med(&|r: &BenchmarkRecord| {
                        r.thresholds.iter().find(|x| x.threshold == t.threshold).and_then(|x| x.seconds)
                    }),
                    iterations: median_iterations(&group, t.threshold).map(|m| m.round() as usize),
                })
                .collect();
            BenchmarkRecord {
                task,
                instance: None,
                method,
                precompute_seconds: med(&|r: &BenchmarkRecord| Some(r.precompute_seconds)).unwrap_or(0.0),
                thresholds,
                kappa_original: med(&|r: &BenchmarkRecord| r.kappa_original),
                kappa_preconditioned: med(&|r: &BenchmarkRecord| r.kappa_preconditioned),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown table format {other}"))),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn task_label(r: &BenchmarkRecord) -> String {
    match r.instance {
        Some(i) => format!("{}#{i}", r.task),
        None => r.task.clone(),
    }
}

/// Renders records as CSV or as a markdown table shaped like a
/// time (iterations) grid.
pub fn emit_tables(records: &[BenchmarkRecord], format: TableFormat) -> String {
    let thresholds: Vec<f64> =
        records.first().map(|r| r.thresholds.iter().map(|t| t.threshold).collect()).unwrap_or_default();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("task,method,precompute_s");
            for t in &thresholds {
                let _ = write!(out, ",time_s@{t:e},iters@{t:e}");
            }
            out.push_str(",kappa_A,kappa_P\n");
            for r in records {
                let _ = write!(out, "{},{},{}", task_label(r), r.method, r.precompute_seconds);
                for t in &r.thresholds {
                    let _ = write!(out, ",{},{}", opt(t.seconds), opt(t.iterations));
                }
                let _ = writeln!(out, ",{},{}", opt(r.kappa_original), opt(r.kappa_preconditioned));
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Task | Method | Precompute time (s) |");
            for t in &thresholds {
                let _ = write!(out, " until {t:e} |");
            }
            out.push_str(" κ(A) | κ(P⁻¹A) |\n|---|---|---|");
            for _ in &thresholds {
                out.push_str("---|");
            }
            out.push_str("---|---|\n");
            for r in records {
                let _ = write!(out, "| {} | {} | {:.4} |", task_label(r), r.method, r.precompute_seconds);
                for t in &r.thresholds {
                    match (t.seconds, t.iterations) {
                        (Some(s), Some(i)) => {
                            let _ = write!(out, " {s:.4} ({i}) |");
                        }
                        _ => out.push_str(" - |"),
                    }
                }
                let k = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
                let _ = writeln!(out, " {} | {} |", k(r.kappa_original), k(r.kappa_preconditioned));
            }
        }
    }
    out
}

fn parse_opt<T: std::str::FromStr>(field: &str, line: usize) -> Result<Option<T>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Parse { line, msg: format!("bad value {field:?}") })
}

/// Parses the CSV written by [`emit_tables`].
pub fn parse_csv(text: &str) -> Result<Vec<BenchmarkRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..3] != ["task", "method", "precompute_s"] || (cols.len() - 5) % 2 != 0 {
        return Err(Error::Parse { line: 1, msg: "unexpected header".into() });
    }
    let thresholds: Vec<f64> = cols[3..cols.len() - 2]
        .chunks(2)
        .map(|c| {
            c[0].strip_prefix("time_s@")
                .and_then(|t| t.parse().ok())
                .ok_or(Error::Parse { line: 1, msg: format!("bad column {}", c[0]) })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse { line: ln, msg: format!("expected {} fields", cols.len()) });
        }
        let (task, instance) = match f[0].rsplit_once('#') {
            Some((t, i)) => (t.to_string(), parse_opt(i, ln)?),
            None => (f[0].to_string(), None),
        };
        let thresholds = thresholds
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                Ok(ThresholdResult {
                    threshold: t,
                    seconds: parse_opt(f[3 + 2 * j], ln)?,
                    iterations: parse_opt(f[4 + 2 * j], ln)?,
                })
            })
            .collect::<Result<_>>()?;
        out.push(BenchmarkRecord {
            task,
            instance,
            method: f[1].to_string(),
            precompute_seconds: parse_opt(f[2], ln)?.unwrap_or(0.0),
            thresholds,
            kappa_original: parse_opt(f[f.len() - 2], ln)?,
            kappa_preconditioned: parse_opt(f[f.len() - 1], ln)?,
        });
    }
    Ok(out)
}
