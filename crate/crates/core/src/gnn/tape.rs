//! Tensor-level reverse-mode differentiation for the message-passing network.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * a b + beta * c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe views that lie within the given slices:
    // every caller passes an `m×k` `a`, a `k×n` `b` and a dense `m×n` `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub type Var = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x W + 1 bᵀ`
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Concat(Vec<Var>),
    Gather { src: Var, index: Arc<Vec<usize>> },
    /// Row `i` is the sum of source rows `offsets[i]..offsets[i+1]`.
    SegmentSum { src: Var, offsets: Arc<Vec<usize>> },
    Mul(Var, Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records one forward evaluation; `backward` replays it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols != wv.rows {
            return Err(Error::Model(format!("linear input width {} but weight expects {}", xv.cols, wv.rows)));
        }
        if bv.rows != 1 || bv.cols != wv.cols {
            return Err(Error::Model("bias shape does not match weight".into()));
        }
        let (m, k, n) = (xv.rows, xv.cols, wv.cols);
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            out.row_mut(r).copy_from_slice(&bv.data);
        }
        gemm(m, k, n, 1.0, &xv.data, (k as isize, 1), &wv.data, (n as isize, 1), 1.0, &mut out.data);
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(Error::Model("concat operands differ in row count".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.data[r * cols + at..r * cols + at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn gather(&mut self, src: Var, index: Arc<Vec<usize>>) -> Var {
        let s = self.value(src);
        let mut out = Tensor::zeros(index.len(), s.cols);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(s.row(i));
        }
        self.push(out, Op::Gather { src, index })
    }

    /// Sums each segment feature-wise. Summands are added in sorted order, so
    /// the result does not depend on the order of rows within a segment.
    pub fn segment_sum(&mut self, src: Var, offsets: Arc<Vec<usize>>) -> Var {
        let s = self.value(src);
        let segments = offsets.len() - 1;
        let mut out = Tensor::zeros(segments, s.cols);
        let mut buf = Vec::new();
        for i in 0..segments {
            for c in 0..s.cols {
                buf.clear();
                buf.extend((offsets[i]..offsets[i + 1]).map(|r| s.data[r * s.cols + c]));
                out.data[i * s.cols + c] = order_free_sum(&mut buf);
            }
        }
        self.push(out, Op::SegmentSum { src, offsets })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows || av.cols != bv.cols {
            return Err(Error::Model("elementwise product of mismatched shapes".into()));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = Tensor { rows: av.rows, cols: av.cols, data };
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v *= factor;
        }
        self.push(out, Op::Scale(x, factor))
    }

    /// Propagates the seed adjoints back through the tape. Returns one
    /// adjoint per node; nodes the seeds do not reach get `None`.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            let node = &self.nodes[v].value;
            if g.rows != node.rows || g.cols != node.cols {
                return Err(Error::DimensionMismatch { expected: node.data.len(), found: g.data.len() });
            }
            accumulate(&mut grads[v], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "adjoint", index: idx });
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (m, k, n) = (xv.rows, xv.cols, wv.cols);
                let mut gx = Tensor::zeros(m, k);
                gemm(m, n, k, 1.0, &g.data, (n as isize, 1), &wv.data, (1, n as isize), 0.0, &mut gx.data);
                let mut gw = Tensor::zeros(k, n);
                gemm(k, m, n, 1.0, &xv.data, (1, k as isize), &g.data, (n as isize, 1), 0.0, &mut gw.data);
                let mut gb = Tensor::zeros(1, n);
                for r in 0..m {
                    for (acc, v) in gb.data.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(&mut grads[x], gx);
                accumulate(&mut grads[w], gw);
                accumulate(&mut grads[b], gb);
            }
            &Op::Relu(x) => {
                let out = &self.nodes[idx].value;
                let data = g.data.iter().zip(&out.data).map(|(gv, o)| if *o > 0.0 { *gv } else { 0.0 }).collect();
                accumulate(&mut grads[x], Tensor { rows: g.rows, cols: g.cols, data });
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    let mut gp = Tensor::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        gp.row_mut(r).copy_from_slice(&g.data[r * g.cols + at..r * g.cols + at + cols]);
                    }
                    at += cols;
                    accumulate(&mut grads[p], gp);
                }
            }
            Op::Gather { src, index } => {
                let s = self.value(*src);
                let mut gs = Tensor::zeros(s.rows, s.cols);
                for (r, &i) in index.iter().enumerate() {
                    for (acc, v) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(&mut grads[*src], gs);
            }
            Op::SegmentSum { src, offsets } => {
                let s = self.value(*src);
                let mut gs = Tensor::zeros(s.rows, s.cols);
                for i in 0..offsets.len() - 1 {
                    for r in offsets[i]..offsets[i + 1] {
                        gs.row_mut(r).copy_from_slice(g.row(i));
                    }
                }
                accumulate(&mut grads[*src], gs);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let ga = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                let gb = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                accumulate(&mut grads[a], Tensor { rows: g.rows, cols: g.cols, data: ga });
                accumulate(&mut grads[b], Tensor { rows: g.rows, cols: g.cols, data: gb });
            }
            &Op::Scale(x, factor) => {
                let data = g.data.iter().map(|v| v * factor).collect();
                accumulate(&mut grads[x], Tensor { rows: g.rows, cols: g.cols, data });
            }
        }
    }

    /// Sign pattern of every ReLU input, used to detect kinks between two
    /// evaluations.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                sig.extend(self.value(x).data.iter().map(|v| *v > 0.0));
            }
        }
        sig
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Sum that does not depend on the order of its inputs.
pub fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}
