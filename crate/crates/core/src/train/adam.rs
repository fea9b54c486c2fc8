use crate::error::{Error, Result};
use crate::gnn::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment accumulators, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, t: u64, lr: f64) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("Adam steps are counted from 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), found: grads.len() });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index: k });
    }
    let c1 = 1.0 - BETA1.powf(t as f64);
    let c2 = 1.0 - BETA2.powf(t as f64);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k].data, &mut state.v[k].data, &grads[k].data);
        for i in 0..p.data.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
