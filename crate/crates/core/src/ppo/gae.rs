//! Generalized advantage estimation over segmented rollout batches.

use super::{PpoConfig, RolloutBatch};
use ndarray::Array1;

/// Fill `advantages` and `returns`: the usual backward GAE recursion per
/// segment (resetting across done flags), followed by whole-batch advantage
/// normalization to mean 0 / std 1.
pub fn compute_gae(batch: &mut RolloutBatch, cfg: &PpoConfig) {
    let n = batch.len();
    let mut adv = Array1::<f64>::zeros(n);
    for seg in &batch.segments {
        let mut next_value = seg.bootstrap;
        let mut carry = 0.0;
        for i in (seg.start..seg.start + seg.len).rev() {
            let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta =
                batch.rewards[i] + cfg.gamma * next_value * not_done - batch.values[i];
            carry = delta + cfg.gamma * cfg.lambda * not_done * carry;
            adv[i] = carry;
            next_value = batch.values[i];
        }
    }
    batch.returns = &adv + &batch.values;
    normalize_advantages(&mut adv);
    batch.advantages = adv;
}

/// In-place normalization to mean 0 / population std 1.
pub fn normalize_advantages(adv: &mut Array1<f64>) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.sum() / n as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    adv.mapv_inplace(|a| (a - mean) / std);
}
