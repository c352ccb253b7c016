//! AdamW and the warmup-stable-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{MooreError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update with learning rate `lr`. Weight decay is applied to
/// the parameters directly, before the moment step.
pub fn adamw_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(MooreError::shape("adamw_step", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(MooreError::shape(
                "adamw_step",
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = hyper.beta1 * *mj + (1.0 - hyper.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = hyper.beta2 * *vj + (1.0 - hyper.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            *pj -= lr * hyper.weight_decay * *pj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Linear warmup over the first `warmup_ratio · total` steps, flat
/// `base_lr`, then linear decay to zero over the last `decay_ratio · total`.
pub fn wsd_schedule(step: u64, total_steps: u64, warmup_ratio: f64, decay_ratio: f64, base_lr: f64) -> f64 {
    let total = total_steps as f64;
    let s = step as f64;
    let warm = warmup_ratio * total;
    let decay = decay_ratio * total;
    if warm > 0.0 && s < warm {
        base_lr * s / warm
    } else if decay > 0.0 && s >= total - decay {
        base_lr * ((total - s) / decay).clamp(0.0, 1.0)
    } else {
        base_lr
    }
}
