//! Bias-corrected Adam over a named-tensor store.

use crate::net::ParamStore;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates, mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam step in place. Math runs in f64; parameters and moments are
/// rounded back onto the f32 grid afterwards so checkpoints stay lossless.
pub fn adam_step(adam: &mut AdamState, params: &mut ParamStore, grads: &ParamStore, lr: f64) {
    adam.step += 1;
    let bc1 = 1.0 - BETA1.powi(adam.step as i32);
    let bc2 = 1.0 - BETA2.powi(adam.step as i32);
    for ti in 0..params.tensors.len() {
        debug_assert_eq!(params.tensors[ti].name, grads.tensors[ti].name);
        let p = &mut params.tensors[ti].data;
        let g = &grads.tensors[ti].data;
        let m = &mut adam.m.tensors[ti].data;
        let v = &mut adam.v.tensors[ti].data;
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    params.round_to_f32();
    adam.m.round_to_f32();
    adam.v.round_to_f32();
}

/// Scale gradients down to a global norm bound, if they exceed it.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
