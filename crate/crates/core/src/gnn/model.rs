use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::graph::{symmetrize_triangulate, GraphData};
use crate::gnn::tape::{order_free_sum, Tape, Tensor, Var};
use crate::precond::{FactorPreconditioner, PreconditionerKind};
use crate::sparse::{CsrMatrix, LowerFactor};

/// Width of node and edge features between network stages.
pub const FEATURE_WIDTH: usize = 16;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
/// The message `e ⊙ v` multiplies feature magnitudes every round, so output
/// layers start small to keep untrained features bounded over many rounds.
pub const OUTPUT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnHyper {
    /// Hidden layers in encoders and decoders.
    pub l: usize,
    pub h: usize,
    /// Message-passing rounds.
    pub n_mp: usize,
    /// Hidden layers in each processor perceptron.
    pub l_mp: usize,
    pub h_mp: usize,
    pub x0_head: bool,
}

impl GnnHyper {
    /// Heat and wave setting.
    pub fn heat() -> Self {
        Self { l: 1, h: 16, n_mp: 5, l_mp: 1, h_mp: 16, x0_head: false }
    }

    pub fn poisson() -> Self {
        Self { l: 2, l_mp: 2, ..Self::heat() }
    }

    pub fn with_x0_head(self) -> Self {
        Self { x0_head: true, ..self }
    }
}

/// Parameter indices of one perceptron: `(weight, bias)` per layer.
#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    layers: Vec<(usize, usize)>,
}

/// Per-graph standardization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub node_mean: f64,
    pub node_std: f64,
    pub edge_mean: f64,
    pub edge_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { node_mean: 0.0, node_std: 1.0, edge_mean: 0.0, edge_std: 1.0 }
    }

    pub fn of(graph: &GraphData) -> Self {
        let (node_mean, node_std) = mean_std(&graph.node_features);
        let (edge_mean, edge_std) = mean_std(&graph.edge_features);
        Self { node_mean, node_std, edge_mean, edge_std }
    }

    /// Factor mapping a decoded node value back to solution units.
    pub fn solution_scale(&self) -> f64 {
        self.node_std / self.edge_std
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = order_free_sum(&mut values.to_vec()) / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let std = (order_free_sum(&mut sq) / n).sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

/// Encoder, `n_mp` message-passing processors, and decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    hyper: GnnHyper,
    normalize: bool,
    names: Vec<String>,
    params: Vec<Tensor>,
    node_encoder: Mlp,
    edge_encoder: Mlp,
    processors: Vec<(Mlp, Mlp)>,
    edge_decoder: Mlp,
    node_decoder: Option<Mlp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// One scalar per directed edge.
    pub edge_scalars: Vec<f64>,
    /// One scalar per node in solution units, when the head is present.
    pub node_scalars: Option<Vec<f64>>,
    pub normalization: Normalization,
}

/// Tape handles produced by [`GnnModel::record`].
pub(crate) struct Recorded {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub edge_out: Var,
    pub node_out: Option<Var>,
    pub normalization: Normalization,
}

struct Builder<'a> {
    names: &'a mut Vec<String>,
    shapes: &'a mut Vec<(usize, usize)>,
}

impl Builder<'_> {
    fn mlp(&mut self, name: &str, input: usize, hidden: usize, layers: usize, output: usize) -> Mlp {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(layers));
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                self.names.push(format!("{name}.{k}.weight"));
                self.shapes.push((w[0], w[1]));
                self.names.push(format!("{name}.{k}.bias"));
                self.shapes.push((1, w[1]));
                (self.names.len() - 2, self.names.len() - 1)
            })
            .collect();
        Mlp { layers }
    }
}

type Layout = (Vec<String>, Vec<(usize, usize)>, Mlp, Mlp, Vec<(Mlp, Mlp)>, Mlp, Option<Mlp>);

fn layout(hyper: &GnnHyper) -> Layout {
    let w = FEATURE_WIDTH;
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut b = Builder { names: &mut names, shapes: &mut shapes };
    let node_encoder = b.mlp("node_encoder", 1, hyper.h, hyper.l, w);
    let edge_encoder = b.mlp("edge_encoder", 1, hyper.h, hyper.l, w);
    let processors = (0..hyper.n_mp)
        .map(|t| {
            let fv = b.mlp(&format!("processor.{t}.node"), 2 * w, hyper.h_mp, hyper.l_mp, w);
            let fe = b.mlp(&format!("processor.{t}.edge"), 3 * w, hyper.h_mp, hyper.l_mp, w);
            (fv, fe)
        })
        .collect();
    let edge_decoder = b.mlp("edge_decoder", w, hyper.h, hyper.l, 1);
    let node_decoder = hyper.x0_head.then(|| b.mlp("node_decoder", w, hyper.h, hyper.l, 1));
    (names, shapes, node_encoder, edge_encoder, processors, edge_decoder, node_decoder)
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    hyper: GnnHyper,
    normalize: bool,
    tensors: Vec<TensorRecord>,
}

impl GnnModel {
    /// Seeded initialization: uniform He bounds on hidden layers, Glorot
    /// bounds scaled by [`OUTPUT_GAIN`] on output layers, zero biases.
    pub fn new(hyper: GnnHyper, seed: u64) -> Result<Self> {
        if hyper.h == 0 || hyper.h_mp == 0 {
            return Err(Error::Model("hidden widths must be positive".into()));
        }
        let (names, shapes, node_encoder, edge_encoder, processors, edge_decoder, node_decoder) = layout(&hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        let all_mlps = [&node_encoder, &edge_encoder]
            .into_iter()
            .chain(processors.iter().flat_map(|(a, b)| [a, b]))
            .chain(std::iter::once(&edge_decoder))
            .chain(node_decoder.iter());
        for mlp in all_mlps {
            let last = mlp.layers.len() - 1;
            for (k, &(w, _)) in mlp.layers.iter().enumerate() {
                let (fan_in, fan_out) = shapes[w];
                let bound = if k < last {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    OUTPUT_GAIN * (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                for v in &mut params[w].data {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(Self { hyper, normalize: true, names, params, node_encoder, edge_encoder, processors, edge_decoder, node_decoder })
    }

    pub fn hyper(&self) -> &GnnHyper {
        &self.hyper
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn set_normalize(&mut self, on: bool) {
        self.normalize = on;
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn has_x0_head(&self) -> bool {
        self.node_decoder.is_some()
    }

    /// Sets every decoder weight and bias to zero.
    pub fn zero_decoders(&mut self) {
        let mlps: Vec<Mlp> = std::iter::once(self.edge_decoder.clone()).chain(self.node_decoder.clone()).collect();
        for mlp in mlps {
            for (w, b) in mlp.layers {
                self.params[w].data.fill(0.0);
                self.params[b].data.fill(0.0);
            }
        }
    }

    /// Zeroes only the output layer of the edge decoder.
    pub fn zero_edge_output(&mut self) {
        let &(w, b) = self.edge_decoder.layers.last().unwrap();
        self.params[w].data.fill(0.0);
        self.params[b].data.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    fn apply_mlp(tape: &mut Tape, params: &[Var], mlp: &Mlp, mut x: Var) -> Result<Var> {
        let last = mlp.layers.len() - 1;
        for (k, &(w, b)) in mlp.layers.iter().enumerate() {
            x = tape.linear(x, params[w], params[b])?;
            if k < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub(crate) fn record(&self, graph: &GraphData) -> Result<Recorded> {
        let norm = if self.normalize { Normalization::of(graph) } else { Normalization::identity() };
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let nodes: Vec<f64> = graph.node_features.iter().map(|v| (v - norm.node_mean) / norm.node_std).collect();
        let edges: Vec<f64> = graph.edge_features.iter().map(|v| (v - norm.edge_mean) / norm.edge_std).collect();
        let v0 = tape.leaf(Tensor::column(&nodes));
        let e0 = tape.leaf(Tensor::column(&edges));
        let mut v = Self::apply_mlp(&mut tape, &params, &self.node_encoder, v0)?;
        let mut e = Self::apply_mlp(&mut tape, &params, &self.edge_encoder, e0)?;
        for (fv, fe) in &self.processors {
            let vj = tape.gather(v, graph.targets.clone());
            let msg = tape.mul(e, vj)?;
            let agg = tape.segment_sum(msg, graph.row_offsets.clone());
            let vin = tape.concat(&[v, agg])?;
            v = Self::apply_mlp(&mut tape, &params, fv, vin)?;
            let vi = tape.gather(v, graph.sources.clone());
            let vj = tape.gather(v, graph.targets.clone());
            let ein = tape.concat(&[e, vi, vj])?;
            e = Self::apply_mlp(&mut tape, &params, fe, ein)?;
        }
        let edge_out = Self::apply_mlp(&mut tape, &params, &self.edge_decoder, e)?;
        let node_out = match &self.node_decoder {
            Some(mlp) => {
                let raw = Self::apply_mlp(&mut tape, &params, mlp, v)?;
                Some(tape.scale(raw, norm.solution_scale()))
            }
            None => None,
        };
        Ok(Recorded { tape, params, edge_out, node_out, normalization: norm })
    }

    pub fn forward(&self, graph: &GraphData) -> Result<ForwardOutput> {
        let rec = self.record(graph)?;
        Ok(ForwardOutput {
            edge_scalars: rec.tape.value(rec.edge_out).data.clone(),
            node_scalars: rec.node_out.map(|v| rec.tape.value(v).data.clone()),
            normalization: rec.normalization,
        })
    }

    /// Which ReLU inputs are positive during a forward pass, in tape order.
    /// The network is smooth in its weights wherever this pattern is
    /// constant.
    pub fn activation_pattern(&self, graph: &GraphData) -> Result<Vec<bool>> {
        Ok(self.record(graph)?.tape.relu_signature())
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyper: self.hyper,
            normalize: self.normalize,
            tensors: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, t)| TensorRecord { name: name.clone(), shape: [t.rows, t.cols], data: t.data.clone() })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported checkpoint version {}", ck.format_version)));
        }
        let mut model = Self::new(ck.hyper, 0)?;
        model.normalize = ck.normalize;
        if ck.tensors.len() != model.params.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, architecture needs {}",
                ck.tensors.len(),
                model.params.len()
            )));
        }
        for ((rec, name), slot) in ck.tensors.into_iter().zip(&model.names).zip(&mut model.params) {
            if &rec.name != name || rec.shape != [slot.rows, slot.cols] {
                return Err(Error::Model(format!("tensor {} does not match expected {name}", rec.name)));
            }
            let t = Tensor::from_vec(rec.shape[0], rec.shape[1], rec.data)?;
            if !t.is_finite() {
                return Err(Error::Model(format!("tensor {name} holds non-finite values")));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

/// `P = (I + L′) D (I + L′)ᵀ` with `D = diag(A)` and `L′` on the strictly
/// lower pattern of `A`.
pub fn assemble_preconditioner(lower_values: &[f64], a: &CsrMatrix) -> Result<FactorPreconditioner> {
    let diag = a.positive_diagonal()?;
    let mut lower = a.strict_lower();
    if lower.nnz() != lower_values.len() {
        return Err(Error::DimensionMismatch { expected: lower.nnz(), found: lower_values.len() });
    }
    if lower_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "factor entry", index: lower_values.iter().position(|v| !v.is_finite()).unwrap() });
    }
    lower.values_mut().copy_from_slice(lower_values);
    Ok(FactorPreconditioner::new(PreconditionerKind::Learned, LowerFactor::new(lower, diag)?))
}

/// Runs the network on `(A, b)` and assembles its preconditioner.
pub fn build_learned(model: &GnnModel, a: &CsrMatrix, b: &[f64]) -> Result<FactorPreconditioner> {
    let graph = crate::gnn::graph_from_system(a, b)?;
    let out = model.forward(&graph)?;
    let lower = symmetrize_triangulate(&out.edge_scalars, &graph)?;
    assemble_preconditioner(&lower, a)
}

pub fn predict_x0(model: &GnnModel, graph: &GraphData) -> Result<Vec<f64>> {
    if !model.has_x0_head() {
        return Err(Error::HeadAbsent);
    }
    Ok(model.forward(graph)?.node_scalars.unwrap())
}

/// Rescales a predicted start by `γ = x̂ᵀb / x̂ᵀAx̂`, the factor minimizing
/// the energy-norm error along `x̂`. Returns zeros when `x̂ᵀAx̂ ≤ 0`.
pub fn energy_scaled_start(a: &CsrMatrix, b: &[f64], x_hat: &[f64]) -> Result<Vec<f64>> {
    let ax = a.spmv(x_hat)?;
    let curvature: f64 = x_hat.iter().zip(&ax).map(|(p, q)| p * q).sum();
    if !(curvature > 0.0) {
        return Ok(vec![0.0; x_hat.len()]);
    }
    let gamma = x_hat.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / curvature;
    Ok(x_hat.iter().map(|v| gamma * v).collect())
}
