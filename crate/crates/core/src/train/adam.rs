//! Adam optimizer over the flat parameter buffer. Moments are stored in f32
//! (matching the checkpoint payload) and updated in f64, so a save/load
//! round trip is lossless and resumed runs are bit-identical.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update with bias correction; parameters are modified in place.
pub fn adam_step(params: &mut [f32], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = BETA1 * state.m[i] as f64 + (1.0 - BETA1) * g;
        let v = BETA2 * state.v[i] as f64 + (1.0 - BETA2) * g * g;
        state.m[i] = m as f32;
        state.v[i] = v as f32;
        let m_hat = state.m[i] as f64 / bc1;
        let v_hat = state.v[i] as f64 / bc2;
        params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + EPS)) as f32;
    }
}

/// Exponential decay: `lr(i) = lr_start * (lr_end / lr_start)^(i / total)`.
pub fn lr_schedule(iter: u64, total: u64, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    lr_start * (lr_end / lr_start).powf(iter as f64 / total as f64)
}
