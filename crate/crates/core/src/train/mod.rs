//! Training the learned preconditioner.

pub mod adam;
pub mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::DatasetTuple;
use crate::gnn::graph::symmetrize_adjoint;
use crate::pcg::{pcg_solve, SolveOptions};
use crate::gnn::{graph_from_system, symmetrize_triangulate, GnnModel, GraphData, Tensor};
use crate::sparse::{CsrMatrix, LowerFactor};

pub use adam::{adam_step, AdamState};
pub use loss::{loss_data, loss_data_grad, loss_naive, loss_naive_grad, LossKind};

/// What one training sample contributes to the batch loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Objective {
    pub loss: LossKind,
    /// Weight `λ` of the auxiliary term `λ ‖x̂₀ − x‖²`.
    pub x0_weight: f64,
    /// Divide the data loss by `‖b‖²`, the naive loss by `‖A‖_F²` and the
    /// auxiliary term by `‖x‖²`.
    pub normalize: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self { loss: LossKind::Data, x0_weight: 0.1, normalize: true }
    }
}

/// A system prepared for repeated network evaluation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub graph: GraphData,
    pub a: CsrMatrix,
    pub x: Vec<f64>,
    pub b: Vec<f64>,
}

impl Sample {
    pub fn new(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<Self> {
        check_dim(a.n(), x.len())?;
        Ok(Self { graph: graph_from_system(a, b)?, a: a.clone(), x: x.to_vec(), b: b.to_vec() })
    }

    pub fn from_tuple(t: &DatasetTuple) -> Result<Self> {
        Self::new(&t.a, &t.x, &t.b)
    }
}

struct Evaluation {
    loss: f64,
    grads: Option<Vec<Tensor>>,
    relu_signature: Vec<bool>,
}

fn factor_from(graph: &GraphData, lower: &[f64]) -> Result<LowerFactor> {
    let mut pattern = graph.lower_pattern().clone();
    pattern.values_mut().copy_from_slice(lower);
    LowerFactor::new(pattern, graph.diagonal().to_vec())
}

fn evaluate(model: &GnnModel, s: &Sample, obj: &Objective, with_grad: bool) -> Result<Evaluation> {
    let rec = model.record(&s.graph)?;
    let m = &rec.tape.value(rec.edge_out).data;
    let lower = symmetrize_triangulate(m, &s.graph)?;
    let factor = factor_from(&s.graph, &lower)?;
    let (raw, grad_lower) = match obj.loss {
        LossKind::Data => loss_data_grad(&factor, &s.x, &s.b)?,
        LossKind::Naive => loss_naive_grad(&factor, &s.a)?,
    };
    let scale = match (obj.normalize, obj.loss) {
        (false, _) => 1.0,
        (true, LossKind::Data) => loss::rhs_scale(&s.b),
        (true, LossKind::Naive) => s.a.frobenius_norm().powi(2),
    };
    let mut total = raw / scale;
    let mut seeds = Vec::new();
    if with_grad {
        let gm: Vec<f64> = symmetrize_adjoint(&grad_lower, &s.graph).into_iter().map(|g| g / scale).collect();
        seeds.push((rec.edge_out, Tensor::column(&gm)));
    }
    if let Some(node) = rec.node_out {
        if obj.x0_weight > 0.0 {
            let xs = if obj.normalize { loss::rhs_scale(&s.x) } else { 1.0 };
            let xh = &rec.tape.value(node).data;
            let w = obj.x0_weight / xs;
            total += w * xh.iter().zip(&s.x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            if with_grad {
                let g: Vec<f64> = xh.iter().zip(&s.x).map(|(p, q)| 2.0 * w * (p - q)).collect();
                seeds.push((node, Tensor::column(&g)));
            }
        }
    }
    let grads = if with_grad {
        let adj = rec.tape.backward(seeds)?;
        Some(
            rec.params
                .iter()
                .zip(model.params())
                .map(|(&v, p)| adj[v].clone().unwrap_or_else(|| Tensor::zeros(p.rows, p.cols)))
                .collect(),
        )
    } else {
        None
    };
    Ok(Evaluation { loss: total, grads, relu_signature: rec.tape.relu_signature() })
}

pub fn sample_loss(model: &GnnModel, s: &Sample, obj: &Objective) -> Result<f64> {
    Ok(evaluate(model, s, obj, false)?.loss)
}

/// Loss of one sample and its gradient with respect to every model tensor.
pub fn sample_gradient(model: &GnnModel, s: &Sample, obj: &Objective) -> Result<(f64, Vec<Tensor>)> {
    let e = evaluate(model, s, obj, true)?;
    Ok((e.loss, e.grads.unwrap()))
}

/// Mean loss and gradient over `batch`; summed in batch order.
pub fn batch_gradient(model: &GnnModel, batch: &[&Sample], obj: &Objective) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = batch.par_iter().map(|s| sample_gradient(model, s, obj)).collect();
    let mut loss = 0.0;
    let mut total: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (acc, gi) in total.iter_mut().zip(&g) {
            for (a, b) in acc.data.iter_mut().zip(&gi.data) {
                *a += b;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for t in &mut total {
        for v in &mut t.data {
            *v *= inv;
        }
    }
    Ok((loss * inv, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many optimizer steps.
    pub checkpoint_every: Option<usize>,
    /// Rescale each batch gradient to at most this global 2-norm. Early
    /// gradients are orders of magnitude larger than late ones and would
    /// otherwise dominate Adam's second-moment estimate for most of a run.
    pub clip_norm: Option<f64>,
    /// Keep the epoch whose model solves a fixed probe subset of the
    /// training samples in the fewest PCG iterations.
    pub selection: Option<Selection>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Selection {
    /// Number of training samples, evenly spaced through the set, solved
    /// after every epoch.
    pub probe: usize,
    pub threshold: f64,
}

impl Default for Selection {
    fn default() -> Self {
        Self { probe: 16, threshold: 1e-8 }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::default(),
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            checkpoint_every: None,
            clip_norm: Some(1.0),
            selection: None,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.selection.is_some_and(|s| s.probe == 0 || !(s.threshold > 0.0 && s.threshold < 1.0)) {
            return Err(Error::Config("selection needs a positive probe size and a threshold in (0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        if !(self.objective.x0_weight >= 0.0) {
            return Err(Error::Config("x0_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub batch_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GnnModel,
    pub curve: Vec<LossPoint>,
    /// `(epoch, median probe iterations)` when selection is enabled.
    pub probe_history: Vec<(usize, f64)>,
    pub selected_epoch: Option<usize>,
}

/// Median PCG iterations to `threshold` with the learned preconditioner;
/// unconverged solves count as `max_iter`.
pub fn probe_iterations(model: &GnnModel, samples: &[Sample], threshold: f64) -> Result<f64> {
    let opts = SolveOptions::with_thresholds(&[threshold]);
    let mut its = Vec::with_capacity(samples.len());
    for s in samples {
        let lower = symmetrize_triangulate(&model.forward(&s.graph)?.edge_scalars, &s.graph)?;
        let p = factor_from(&s.graph, &lower)?;
        let (_, rep) = pcg_solve(&s.a, &s.b, &p, &opts)?;
        its.push(rep.iterations_at(threshold).unwrap_or(rep.iterations) as f64);
    }
    Ok(crate::bench::median_f64(&mut its).unwrap_or(0.0))
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,epoch,batch_loss,wall_seconds\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{:e},{:.6}", p.step, p.epoch, p.batch_loss, p.wall_seconds);
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_step{step:06}.json")
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// Scales `grads` so that their joint 2-norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for v in grads.iter_mut().flat_map(|g| g.data.iter_mut()) {
            *v *= s;
        }
    }
    norm
}

/// Minibatch Adam over `samples`, reshuffled each epoch from `config.seed`.
pub fn train(model: &GnnModel, samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() && config.epochs > 0 {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut model = model.clone();
    let mut state = AdamState::zeros_like(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::new();
    let mut initial: Option<f64> = None;
    let start = Instant::now();
    let mut step = 0;
    let probe: Option<Vec<Sample>> = config.selection.map(|sel| {
        let k = sel.probe.min(samples.len());
        (0..k).map(|i| samples[i * samples.len() / k].clone()).collect()
    });
    let mut probe_history = Vec::new();
    let mut best: Option<(f64, usize, GnnModel)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grads) = batch_gradient(&model, &batch, &config.objective)?;
            let reference = *initial.get_or_insert(loss);
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference {
                return Err(Error::Divergence { step, loss });
            }
            step += 1;
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam_step(model.params_mut(), &grads, &mut state, step as u64, config.learning_rate)?;
            curve.push(LossPoint { step, epoch, batch_loss: loss, wall_seconds: start.elapsed().as_secs_f64() });
            if let (Some(dir), Some(every)) = (&config.output_dir, config.checkpoint_every) {
                if step % every == 0 {
                    model.save(&dir.join(checkpoint_name(step)))?;
                }
            }
        }
        if let Some(p) = curve.last() {
            log::info!("epoch {epoch}: step {} loss {:e}", p.step, p.batch_loss);
        }
        if let (Some(sel), Some(probe)) = (config.selection, &probe) {
            let score = probe_iterations(&model, probe, sel.threshold)?;
            log::info!("epoch {epoch}: probe median {score}");
            probe_history.push((epoch, score));
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, epoch, model.clone()));
            }
        }
    }
    let selected_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, m)) = best {
        model = m;
    }
    if let Some(dir) = &config.output_dir {
        model.save(&dir.join("model.json"))?;
        write(&dir.join("loss_curve.csv"), &loss_curve_csv(&curve))?;
    }
    Ok(TrainOutcome { model, curve, probe_history, selected_epoch })
}

/// Adjoint versus central finite difference for one scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// A ReLU input changed sign within `±step`, so the loss is not smooth
    /// there and the difference quotient does not estimate the derivative.
    pub kink: bool,
}

impl GradientCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares every parameter adjoint with a central difference of step `h`.
pub fn gradient_check(model: &GnnModel, s: &Sample, obj: &Objective, h: f64) -> Result<Vec<GradientCheck>> {
    let base = evaluate(model, s, obj, true)?;
    let grads = base.grads.unwrap();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.n_parameters());
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.data.len() {
            let orig = probe.params()[t].data[i];
            probe.params_mut()[t].data[i] = orig + h;
            let up = evaluate(&probe, s, obj, false)?;
            probe.params_mut()[t].data[i] = orig - h;
            let down = evaluate(&probe, s, obj, false)?;
            probe.params_mut()[t].data[i] = orig;
            out.push(GradientCheck {
                tensor: t,
                index: i,
                analytic: g.data[i],
                numeric: (up.loss - down.loss) / (2.0 * h),
                kink: up.relu_signature != base.relu_signature || down.relu_signature != base.relu_signature,
            });
        }
    }
    Ok(out)
}
