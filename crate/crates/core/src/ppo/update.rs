//! The clipped-surrogate PPO update over a collected batch.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, clip_global_norm, AdamState};
use super::{PpoConfig, RolloutBatch};
use crate::error::TrainError;
use crate::net::{
    entropy, log_probs_batch, policy_backward, policy_forward, value_backward, value_forward,
    NetConfig, PolicyParams, ValueParams, ACTION_DIM, LOG_STD_NAME,
};

/// Loss diagnostics for one `ppo_update` call.
#[derive(Debug, Clone, Copy, Default)]
pub struct PpoStats {
    /// Surrogate policy loss of the first minibatch, before any update.
    pub first_surrogate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Per-sample clipped objective: `min(ratio * adv, clamp(ratio) * adv)`.
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// The full-batch surrogate policy loss under the current parameters,
/// without updating anything. On freshly collected data this equals
/// -mean(normalized advantages).
pub fn surrogate_loss(
    policy: &PolicyParams,
    net: &NetConfig,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
) -> Result<f64, TrainError> {
    let (means, _) = policy_forward(policy, net, &batch.obs)?;
    let log_std = &policy.store.get(LOG_STD_NAME).data;
    let lp_new = log_probs_batch(&means, log_std, &batch.actions);
    let mut total = 0.0;
    for i in 0..batch.len() {
        let ratio = (lp_new[i] - batch.log_probs[i]).exp();
        total += clipped_objective(ratio, batch.advantages[i], cfg.clip_epsilon);
    }
    Ok(-total / batch.len() as f64)
}

fn gather_rows(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), src.ncols()));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&src.row(i));
    }
    out
}

fn gather1(src: &Array1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| src[i]))
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Run `cfg.epochs` of seeded-shuffle minibatch updates on the batch,
/// applying Adam to both networks. Gradients are global-norm clipped.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut PolicyParams,
    value: &mut ValueParams,
    adam_policy: &mut AdamState,
    adam_value: &mut AdamState,
    net: &NetConfig,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    iteration: u64,
) -> Result<PpoStats, TrainError> {
    let n = batch.len();
    let mut stats = PpoStats::default();
    if n == 0 || cfg.epochs == 0 {
        return Ok(stats);
    }

    let mut first = true;
    for _epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb = chunk.len();
            let obs = gather_rows(&batch.obs, chunk);
            let acts = gather_rows(&batch.actions, chunk);
            let lp_old = gather1(&batch.log_probs, chunk);
            let adv = gather1(&batch.advantages, chunk);
            let rets = gather1(&batch.returns, chunk);

            // ---- policy ----
            let (means, cache) = policy_forward(policy, net, &obs)?;
            let log_std: Vec<f64> = policy.store.get(LOG_STD_NAME).data.clone();
            let lp_new = log_probs_batch(&means, &log_std, &acts);

            let mut surrogate = 0.0;
            let mut clipped_count = 0usize;
            // d(loss)/d(lp_new); zero where the clipped branch is active.
            let mut d_lp = Array1::<f64>::zeros(mb);
            for i in 0..mb {
                let ratio = (lp_new[i] - lp_old[i]).exp();
                let unclipped = ratio * adv[i];
                let clipped =
                    ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv[i];
                surrogate += unclipped.min(clipped);
                if unclipped <= clipped {
                    d_lp[i] = -(ratio * adv[i]) / mb as f64;
                } else {
                    clipped_count += 1;
                }
            }
            let surrogate_loss_mb = -surrogate / mb as f64;
            let ent = entropy(&log_std);
            let policy_loss = surrogate_loss_mb - cfg.entropy_coeff * ent;
            if first {
                stats.first_surrogate = surrogate_loss_mb;
                first = false;
            }

            if !policy_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: format!("policy loss {policy_loss}"),
                });
            }

            // Chain into mean and log-std gradients.
            let mut d_means = Array2::<f64>::zeros((mb, ACTION_DIM));
            let mut d_log_std = [0.0f64; ACTION_DIM];
            for i in 0..mb {
                if d_lp[i] == 0.0 {
                    continue;
                }
                for k in 0..ACTION_DIM {
                    let std = log_std[k].exp();
                    let z = (acts[[i, k]] - means[[i, k]]) / std;
                    d_means[[i, k]] = d_lp[i] * z / std;
                    d_log_std[k] += d_lp[i] * (z * z - 1.0);
                }
            }
            for k in 0..ACTION_DIM {
                // Entropy bonus: dH/d(log_std_k) = 1.
                d_log_std[k] -= cfg.entropy_coeff;
            }

            let mut grads = policy_backward(policy, net, &cache, &d_means)?;
            grads.get_mut(LOG_STD_NAME).data.copy_from_slice(&d_log_std);
            if !grads.all_finite() {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: "policy gradients".into(),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_norm_clip);
            adam_step(adam_policy, &mut policy.store, &grads, cfg.lr_policy);

            // ---- value ----
            let (values, vcache) = value_forward(value, net, &obs)?;
            let diff = &values - &rets;
            let value_loss = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
            if !value_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: format!("value loss {value_loss}"),
                });
            }
            let d_values = diff.mapv(|d| 2.0 * d / mb as f64);
            let mut vgrads = value_backward(value, net, &vcache, &d_values)?;
            if !vgrads.all_finite() {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: "value gradients".into(),
                });
            }
            clip_global_norm(&mut vgrads, cfg.grad_norm_clip);
            adam_step(adam_value, &mut value.store, &vgrads, cfg.lr_value);

            stats.policy_loss = policy_loss;
            stats.value_loss = value_loss;
            stats.entropy = ent;
            stats.clip_fraction = clipped_count as f64 / mb as f64;
            stats.minibatches += 1;
        }
    }
    Ok(stats)
}
