//! The actor/critic networks: two 1-D conv layers over the stacked scans,
//! two fully connected layers after merging in the goal and velocity, and a
//! linear head. Forward and backward passes are written out by hand against
//! a flat named-tensor store, which keeps Adam, gradient clipping, and the
//! checkpoint format trivial.
//!
//! All math runs in f64. Parameter values are kept exactly representable in
//! f32 (they are rounded after init and after every optimizer step), so the
//! f32 checkpoint tensors round-trip bit-exactly.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::rng::{derive_stream, STREAM_PARAM_INIT};

pub const ACTION_DIM: usize = 2;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n_beams: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc1: usize,
    pub fc2: usize,
}

impl NetConfig {
    pub fn with_beams(n_beams: usize) -> Self {
        NetConfig {
            n_beams,
            conv1: ConvSpec {
                filters: 32,
                kernel: 5,
                stride: 2,
            },
            conv2: ConvSpec {
                filters: 32,
                kernel: 3,
                stride: 2,
            },
            fc1: 256,
            fc2: 128,
        }
    }

    pub fn l1_len(&self) -> usize {
        (self.n_beams - self.conv1.kernel) / self.conv1.stride + 1
    }

    pub fn l2_len(&self) -> usize {
        (self.l1_len() - self.conv2.kernel) / self.conv2.stride + 1
    }

    /// Flattened conv output size.
    pub fn flat_dim(&self) -> usize {
        self.conv2.filters * self.l2_len()
    }

    /// Flattened observation size: 3 scan frames plus goal and velocity.
    pub fn obs_dim(&self) -> usize {
        3 * self.n_beams + 4
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.conv1.filters == 0
            || self.conv2.filters == 0
            || self.fc1 == 0
            || self.fc2 == 0
            || self.conv1.kernel == 0
            || self.conv2.kernel == 0
            || self.conv1.stride == 0
            || self.conv2.stride == 0
        {
            return Err(NetError::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.n_beams < self.conv1.kernel {
            return Err(NetError::InvalidConfig(format!(
                "n_beams {} smaller than conv1 kernel {}",
                self.n_beams, self.conv1.kernel
            )));
        }
        if self.l1_len() < self.conv2.kernel {
            return Err(NetError::InvalidConfig(format!(
                "conv1 output {} smaller than conv2 kernel {}",
                self.l1_len(),
                self.conv2.kernel
            )));
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::with_beams(512)
    }
}

// ---------------------------------------------------------------------------
// Named tensors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        NamedTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// An ordered collection of named tensors. Order is fixed at construction
/// and shared between parameters, gradients, and Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn get(&self, name: &str) -> &NamedTensor {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut NamedTensor {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    /// 2-D view of a tensor collapsed to (rows, cols).
    pub fn view2(&self, name: &str, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        let t = self.get(name);
        debug_assert_eq!(t.len(), rows * cols, "tensor {name} shape mismatch");
        ArrayView2::from_shape((rows, cols), &t.data).unwrap()
    }

    pub fn vec1(&self, name: &str) -> Array1<f64> {
        Array1::from_vec(self.get(name).data.clone())
    }

    /// Same tensor names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor::zeros(&t.name, &t.shape))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Round every value to the nearest f32. Keeping parameters on the f32
    /// grid makes the f32 checkpoint encoding lossless.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

pub const LOG_STD_NAME: &str = "log_std";
pub const LOG_STD_INIT: f64 = -0.5;

/// Actor parameters: the trunk plus a 2-unit head and the free log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub store: ParamStore,
}

/// Critic parameters: the same trunk shape with a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub store: ParamStore,
}

fn trunk_shapes(cfg: &NetConfig, head_dim: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("conv1_w", vec![cfg.conv1.filters, 3, cfg.conv1.kernel]),
        ("conv1_b", vec![cfg.conv1.filters]),
        (
            "conv2_w",
            vec![cfg.conv2.filters, cfg.conv1.filters, cfg.conv2.kernel],
        ),
        ("conv2_b", vec![cfg.conv2.filters]),
        ("fc1_w", vec![cfg.fc1, cfg.flat_dim()]),
        ("fc1_b", vec![cfg.fc1]),
        ("fc2_w", vec![cfg.fc2, cfg.fc1 + 4]),
        ("fc2_b", vec![cfg.fc2]),
        ("head_w", vec![head_dim, cfg.fc2]),
        ("head_b", vec![head_dim]),
    ]
}

fn init_store(cfg: &NetConfig, head_dim: usize, rng: &mut ChaCha8Rng, log_std: bool) -> ParamStore {
    let mut tensors = Vec::new();
    for (name, shape) in trunk_shapes(cfg, head_dim) {
        let mut t = NamedTensor::zeros(name, &shape);
        if name.ends_with("_w") {
            // Fan-in-scaled uniform init; biases stay zero.
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in &mut t.data {
                *x = rng.random_range(-bound..bound);
            }
        }
        tensors.push(t);
    }
    if log_std {
        let mut t = NamedTensor::zeros(LOG_STD_NAME, &[ACTION_DIM]);
        t.data.fill(LOG_STD_INIT);
        tensors.push(t);
    }
    let mut store = ParamStore { tensors };
    store.round_to_f32();
    store
}

/// Deterministic parameter init for both networks from one seed.
pub fn init_params(cfg: &NetConfig, seed: u64) -> (PolicyParams, ValueParams) {
    let mut rng = derive_stream(seed, STREAM_PARAM_INIT);
    let policy = PolicyParams {
        store: init_store(cfg, ACTION_DIM, &mut rng, true),
    };
    let value = ValueParams {
        store: init_store(cfg, 1, &mut rng, false),
    };
    (policy, value)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Per-layer buffers retained for the backward pass.
pub struct ForwardCache {
    n: usize,
    head_dim: usize,
    im1: Array2<f64>,
    y1: Array2<f64>,
    im2: Array2<f64>,
    y2: Array2<f64>,
    z: Array2<f64>,
    y3: Array2<f64>,
    u: Array2<f64>,
    y4: Array2<f64>,
    a4: Array2<f64>,
    y5: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn add_row_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

fn check_obs_shape(cfg: &NetConfig, obs: &Array2<f64>) -> Result<(), NetError> {
    if obs.ncols() != cfg.obs_dim() {
        return Err(NetError::ShapeMismatch(format!(
            "observation has {} dims, network expects {}",
            obs.ncols(),
            cfg.obs_dim()
        )));
    }
    Ok(())
}

/// Shared trunk: conv, conv, fc1, merge goal+velocity, fc2, linear head.
/// Returns raw head outputs plus the cache.
fn trunk_forward(
    store: &ParamStore,
    cfg: &NetConfig,
    obs: &Array2<f64>,
    head_dim: usize,
) -> (Array2<f64>, ForwardCache) {
    let n = obs.nrows();
    let b = cfg.n_beams;
    let (c1, k1, s1) = (cfg.conv1.filters, cfg.conv1.kernel, cfg.conv1.stride);
    let (c2, k2, s2) = (cfg.conv2.filters, cfg.conv2.kernel, cfg.conv2.stride);
    let (l1, l2) = (cfg.l1_len(), cfg.l2_len());

    // conv1 as a GEMM over unrolled windows.
    let mut im1 = Array2::<f64>::zeros((n * l1, 3 * k1));
    for i in 0..n {
        for p in 0..l1 {
            let row = i * l1 + p;
            for ic in 0..3 {
                let base = ic * b + p * s1;
                for t in 0..k1 {
                    im1[[row, ic * k1 + t]] = obs[[i, base + t]];
                }
            }
        }
    }
    let w1 = store.view2("conv1_w", c1, 3 * k1);
    let mut y1 = im1.dot(&w1.t());
    add_row_bias(&mut y1, &store.vec1("conv1_b"));
    let a1 = y1.mapv(relu);

    // conv2 over the activations.
    let mut im2 = Array2::<f64>::zeros((n * l2, c1 * k2));
    for i in 0..n {
        for q in 0..l2 {
            let row = i * l2 + q;
            for t in 0..k2 {
                let src = i * l1 + q * s2 + t;
                for c in 0..c1 {
                    im2[[row, c * k2 + t]] = a1[[src, c]];
                }
            }
        }
    }
    let w2 = store.view2("conv2_w", c2, c1 * k2);
    let mut y2 = im2.dot(&w2.t());
    add_row_bias(&mut y2, &store.vec1("conv2_b"));
    let a2 = y2.mapv(relu);

    // Channel-major flatten.
    let flat = cfg.flat_dim();
    let mut z = Array2::<f64>::zeros((n, flat));
    for i in 0..n {
        for q in 0..l2 {
            for c in 0..c2 {
                z[[i, c * l2 + q]] = a2[[i * l2 + q, c]];
            }
        }
    }

    let w3 = store.view2("fc1_w", cfg.fc1, flat);
    let mut y3 = z.dot(&w3.t());
    add_row_bias(&mut y3, &store.vec1("fc1_b"));
    let a3 = y3.mapv(relu);

    // Merge the goal and velocity back in.
    let mut u = Array2::<f64>::zeros((n, cfg.fc1 + 4));
    u.slice_mut(ndarray::s![.., 0..cfg.fc1]).assign(&a3);
    u.slice_mut(ndarray::s![.., cfg.fc1..])
        .assign(&obs.slice(ndarray::s![.., 3 * b..]));

    let w4 = store.view2("fc2_w", cfg.fc2, cfg.fc1 + 4);
    let mut y4 = u.dot(&w4.t());
    add_row_bias(&mut y4, &store.vec1("fc2_b"));
    let a4 = y4.mapv(relu);

    let w5 = store.view2("head_w", head_dim, cfg.fc2);
    let mut y5 = a4.dot(&w5.t());
    add_row_bias(&mut y5, &store.vec1("head_b"));

    let cache = ForwardCache {
        n,
        head_dim,
        im1,
        y1,
        im2,
        y2,
        z,
        y3,
        u,
        y4,
        a4,
        y5: y5.clone(),
    };
    (y5, cache)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Actor forward: mean velocities, squashed into (0,1) x (-1,1).
pub fn policy_forward(
    params: &PolicyParams,
    cfg: &NetConfig,
    obs: &Array2<f64>,
) -> Result<(Array2<f64>, ForwardCache), NetError> {
    check_obs_shape(cfg, obs)?;
    let (y5, cache) = trunk_forward(&params.store, cfg, obs, ACTION_DIM);
    let mut means = y5;
    for mut row in means.rows_mut() {
        row[0] = sigmoid(row[0]);
        row[1] = row[1].tanh();
    }
    Ok((means, cache))
}

/// Critic forward: one scalar per observation, no squashing.
pub fn value_forward(
    params: &ValueParams,
    cfg: &NetConfig,
    obs: &Array2<f64>,
) -> Result<(Array1<f64>, ForwardCache), NetError> {
    check_obs_shape(cfg, obs)?;
    let (y5, cache) = trunk_forward(&params.store, cfg, obs, 1);
    Ok((y5.column(0).to_owned(), cache))
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

fn relu_mask_mul(d: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(d).and(pre).for_each(|g, &y| {
        if y <= 0.0 {
            *g = 0.0;
        }
    });
}

fn set_grad2(grads: &mut ParamStore, name: &str, value: &Array2<f64>) {
    let t = grads.get_mut(name);
    debug_assert_eq!(t.len(), value.len());
    for (dst, src) in t.data.iter_mut().zip(value.iter()) {
        *dst = *src;
    }
}

fn set_grad1(grads: &mut ParamStore, name: &str, value: &Array1<f64>) {
    let t = grads.get_mut(name);
    debug_assert_eq!(t.len(), value.len());
    for (dst, src) in t.data.iter_mut().zip(value.iter()) {
        *dst = *src;
    }
}

fn col_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(ndarray::Axis(0))
}

/// Gradients of every trunk parameter given d(loss)/d(head outputs).
fn trunk_backward(
    store: &ParamStore,
    cfg: &NetConfig,
    cache: &ForwardCache,
    d_y5: &Array2<f64>,
) -> ParamStore {
    let n = cache.n;
    let head_dim = cache.head_dim;
    let c1 = cfg.conv1.filters;
    let (c2, k2, s2) = (cfg.conv2.filters, cfg.conv2.kernel, cfg.conv2.stride);
    let (l1, l2) = (cfg.l1_len(), cfg.l2_len());
    let flat = cfg.flat_dim();

    let mut grads = store.zeros_like();

    // Head.
    let w5 = store.view2("head_w", head_dim, cfg.fc2);
    set_grad2(&mut grads, "head_w", &d_y5.t().dot(&cache.a4));
    set_grad1(&mut grads, "head_b", &col_sums(d_y5));
    let d_a4 = d_y5.dot(&w5);

    // fc2.
    let mut d_y4 = d_a4;
    relu_mask_mul(&mut d_y4, &cache.y4);
    let w4 = store.view2("fc2_w", cfg.fc2, cfg.fc1 + 4);
    set_grad2(&mut grads, "fc2_w", &d_y4.t().dot(&cache.u));
    set_grad1(&mut grads, "fc2_b", &col_sums(&d_y4));
    let d_u = d_y4.dot(&w4);

    // fc1 (the goal/velocity tail of u carries no parameters).
    let mut d_y3 = d_u.slice(ndarray::s![.., 0..cfg.fc1]).to_owned();
    relu_mask_mul(&mut d_y3, &cache.y3);
    let w3 = store.view2("fc1_w", cfg.fc1, flat);
    set_grad2(&mut grads, "fc1_w", &d_y3.t().dot(&cache.z));
    set_grad1(&mut grads, "fc1_b", &col_sums(&d_y3));
    let d_z = d_y3.dot(&w3);

    // Un-flatten into conv2 activation layout.
    let mut d_a2 = Array2::<f64>::zeros((n * l2, c2));
    for i in 0..n {
        for q in 0..l2 {
            for c in 0..c2 {
                d_a2[[i * l2 + q, c]] = d_z[[i, c * l2 + q]];
            }
        }
    }

    // conv2.
    let mut d_y2 = d_a2;
    relu_mask_mul(&mut d_y2, &cache.y2);
    let w2 = store.view2("conv2_w", c2, c1 * k2);
    set_grad2(&mut grads, "conv2_w", &d_y2.t().dot(&cache.im2));
    set_grad1(&mut grads, "conv2_b", &col_sums(&d_y2));
    let d_im2 = d_y2.dot(&w2);

    // Scatter window gradients back onto conv1 activations.
    let mut d_a1 = Array2::<f64>::zeros((n * l1, c1));
    for i in 0..n {
        for q in 0..l2 {
            let row = i * l2 + q;
            for t in 0..k2 {
                let dst = i * l1 + q * s2 + t;
                for c in 0..c1 {
                    d_a1[[dst, c]] += d_im2[[row, c * k2 + t]];
                }
            }
        }
    }

    // conv1.
    let mut d_y1 = d_a1;
    relu_mask_mul(&mut d_y1, &cache.y1);
    set_grad2(&mut grads, "conv1_w", &d_y1.t().dot(&cache.im1));
    set_grad1(&mut grads, "conv1_b", &col_sums(&d_y1));

    grads
}

/// Actor backward: takes d(loss)/d(mean velocities) and chains through the
/// output squashing. The returned store includes a zeroed log-std slot; its
/// gradient comes from the Gaussian log-prob terms, which the caller owns.
pub fn policy_backward(
    params: &PolicyParams,
    cfg: &NetConfig,
    cache: &ForwardCache,
    d_means: &Array2<f64>,
) -> Result<ParamStore, NetError> {
    if d_means.dim() != (cache.n, ACTION_DIM) {
        return Err(NetError::ShapeMismatch(format!(
            "d_means has shape {:?}, expected ({}, {})",
            d_means.dim(),
            cache.n,
            ACTION_DIM
        )));
    }
    let mut d_y5 = d_means.clone();
    for (mut row, y) in d_y5.rows_mut().into_iter().zip(cache.y5.rows()) {
        let s = sigmoid(y[0]);
        row[0] *= s * (1.0 - s);
        let t = y[1].tanh();
        row[1] *= 1.0 - t * t;
    }
    Ok(trunk_backward(&params.store, cfg, cache, &d_y5))
}

/// Critic backward from d(loss)/d(value).
pub fn value_backward(
    params: &ValueParams,
    cfg: &NetConfig,
    cache: &ForwardCache,
    d_values: &Array1<f64>,
) -> Result<ParamStore, NetError> {
    if d_values.len() != cache.n {
        return Err(NetError::ShapeMismatch(format!(
            "d_values has length {}, expected {}",
            d_values.len(),
            cache.n
        )));
    }
    let d_y5 = d_values.view().insert_axis(ndarray::Axis(1)).to_owned();
    Ok(trunk_backward(&params.store, cfg, cache, &d_y5))
}

// ---------------------------------------------------------------------------
// Gaussian action distribution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Raw Gaussian draw; log-prob is computed on this.
    pub pre_clamp: [f64; 2],
    /// Actuated action, clamped to [0,1] x [-1,1].
    pub action: [f64; 2],
    pub log_prob: f64,
}

pub fn clamp_action(a: [f64; 2]) -> [f64; 2] {
    [a[0].clamp(0.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

/// Draw an action from the diagonal Gaussian around the mean.
pub fn sample_action(mean: [f64; 2], log_std: &[f64], rng: &mut ChaCha8Rng) -> SampledAction {
    debug_assert_eq!(log_std.len(), ACTION_DIM);
    let mut pre = [0.0; 2];
    for i in 0..ACTION_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        pre[i] = mean[i] + log_std[i].exp() * eps;
    }
    SampledAction {
        pre_clamp: pre,
        action: clamp_action(pre),
        log_prob: log_prob(mean, log_std, pre),
    }
}

/// Diagonal-Gaussian log density of `action` (pre-clamp) around `mean`.
pub fn log_prob(mean: [f64; 2], log_std: &[f64], action: [f64; 2]) -> f64 {
    let mut lp = 0.0;
    for i in 0..ACTION_DIM {
        let std = log_std[i].exp();
        let z = (action[i] - mean[i]) / std;
        lp += -log_std[i] - 0.5 * LN_2PI - 0.5 * z * z;
    }
    lp
}

/// Entropy of the diagonal Gaussian: sum of log-std plus a constant per dim.
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
}

/// Batched log-probs for the PPO update.
pub fn log_probs_batch(means: &Array2<f64>, log_std: &[f64], actions: &Array2<f64>) -> Array1<f64> {
    let n = means.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        out[i] = log_prob(
            [means[[i, 0]], means[[i, 1]]],
            log_std,
            [actions[[i, 0]], actions[[i, 1]]],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny_cfg() -> NetConfig {
        NetConfig::with_beams(16)
    }

    fn random_obs(cfg: &NetConfig, rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, cfg.obs_dim()), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_cfg();
        let (p1, v1) = init_params(&cfg, 42);
        let (p2, v2) = init_params(&cfg, 42);
        assert_eq!(p1.store, p2.store);
        assert_eq!(v1.store, v2.store);
        let (p3, _) = init_params(&cfg, 43);
        assert_ne!(p1.store, p3.store);
    }

    #[test]
    fn log_std_initialized_to_minus_half() {
        let (p, _) = init_params(&tiny_cfg(), 0);
        assert_eq!(p.store.get(LOG_STD_NAME).data, vec![-0.5, -0.5]);
    }

    #[test]
    fn init_tensors_finite_with_spread() {
        let (p, v) = init_params(&tiny_cfg(), 7);
        for store in [&p.store, &v.store] {
            assert!(store.all_finite());
            for t in &store.tensors {
                if t.name.ends_with("_w") {
                    let min = t.data.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert!(max > min, "tensor {} has no spread", t.name);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_centered_outputs() {
        let cfg = tiny_cfg();
        let (mut p, mut v) = init_params(&cfg, 1);
        for t in &mut p.store.tensors {
            t.data.fill(0.0);
        }
        for t in &mut v.store.tensors {
            t.data.fill(0.0);
        }
        let obs = random_obs(&cfg, &mut derive_stream(5, 1), 3);
        let (means, _) = policy_forward(&p, &cfg, &obs).unwrap();
        for row in means.rows() {
            assert_eq!(row[0], 0.5);
            assert_eq!(row[1], 0.0);
        }
        let (values, _) = value_forward(&v, &cfg, &obs).unwrap();
        assert!(values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mean_outputs_respect_bounds() {
        let cfg = tiny_cfg();
        let (p, _) = init_params(&cfg, 3);
        let mut rng = derive_stream(9, 2);
        for _ in 0..20 {
            let obs = random_obs(&cfg, &mut rng, 4);
            let (means, _) = policy_forward(&p, &cfg, &obs).unwrap();
            for row in means.rows() {
                assert!(row[0] > 0.0 && row[0] < 1.0);
                assert!(row[1] > -1.0 && row[1] < 1.0);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let cfg = tiny_cfg();
        let (p, v) = init_params(&cfg, 11);
        let obs = random_obs(&cfg, &mut derive_stream(1, 1), 2);
        let (m1, _) = policy_forward(&p, &cfg, &obs).unwrap();
        let (m2, _) = policy_forward(&p, &cfg, &obs).unwrap();
        assert_eq!(m1, m2);
        let (v1, _) = value_forward(&v, &cfg, &obs).unwrap();
        let (v2, _) = value_forward(&v, &cfg, &obs).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn value_finite_on_extreme_inputs() {
        let cfg = tiny_cfg();
        let (_, v) = init_params(&cfg, 13);
        let obs = Array2::from_elem((1, cfg.obs_dim()), 5.0);
        let (values, _) = value_forward(&v, &cfg, &obs).unwrap();
        assert!(values[0].is_finite());
        let obs = Array2::from_elem((1, cfg.obs_dim()), -5.0);
        let (values, _) = value_forward(&v, &cfg, &obs).unwrap();
        assert!(values[0].is_finite());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let cfg = tiny_cfg();
        let (p, _) = init_params(&cfg, 1);
        let obs = Array2::zeros((1, cfg.obs_dim() + 1));
        assert!(matches!(
            policy_forward(&p, &cfg, &obs),
            Err(NetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn degenerate_std_returns_clamped_mean() {
        let mut rng = derive_stream(0, 1);
        let s = sample_action([0.9, -0.4], &[-80.0, -80.0], &mut rng);
        assert_eq!(s.action, [0.9, -0.4]);
        let s = sample_action([2.0, -3.0], &[-80.0, -80.0], &mut rng);
        assert_eq!(s.action, [1.0, -1.0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_action([0.5, 0.0], &[-0.5, -0.5], &mut derive_stream(3, 8));
        let b = sample_action([0.5, 0.0], &[-0.5, -0.5], &mut derive_stream(3, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn standard_normal_log_prob_at_zero() {
        let lp = log_prob([0.0, 0.0], &[0.0, 0.0], [0.0, 0.0]);
        assert!((lp - (-LN_2PI)).abs() < 1e-12);
        assert!((lp - (-1.8379)).abs() < 1e-4);
    }

    #[test]
    fn log_prob_at_mode() {
        let ls = [-0.3, 0.4];
        let lp = log_prob([0.2, -0.1], &ls, [0.2, -0.1]);
        let expected = -(ls[0] + ls[1]) - LN_2PI;
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn unit_gaussian_entropy() {
        let h = entropy(&[0.0, 0.0]);
        assert!((h - (LN_2PI + 1.0)).abs() < 1e-12);
        assert!((h - 2.8379).abs() < 1e-4);
    }

    #[test]
    fn density_integrates_to_one() {
        // Quadrature oracle: integrate the density over a wide grid.
        let mean = [0.3, -0.2];
        let ls: [f64; 2] = [-0.4, 0.1];
        let lim = 6.0;
        let steps = 400;
        let h0 = 2.0 * lim * ls[0].exp() / steps as f64;
        let h1 = 2.0 * lim * ls[1].exp() / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let a = [
                    mean[0] - lim * ls[0].exp() + (i as f64 + 0.5) * h0,
                    mean[1] - lim * ls[1].exp() + (j as f64 + 0.5) * h1,
                ];
                total += log_prob(mean, &ls, a).exp() * h0 * h1;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn log_prob_grad_zero_at_mode() {
        // d log p / d mean = (a - mean)/std^2 vanishes at the mode.
        let mean = [0.4, 0.1];
        let ls = [-0.2, -0.6];
        let h = 1e-6;
        for i in 0..2 {
            let mut hi = mean;
            hi[i] += h;
            let mut lo = mean;
            lo[i] -= h;
            let g = (log_prob(hi, &ls, mean) - log_prob(lo, &ls, mean)) / (2.0 * h);
            assert!(g.abs() < 1e-6);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let cfg = tiny_cfg();
        let (p, _) = init_params(&cfg, 21);
        let obs = random_obs(&cfg, &mut derive_stream(2, 2), 3);
        let (_, cache) = policy_forward(&p, &cfg, &obs).unwrap();
        let grads = policy_backward(&p, &cfg, &cache, &Array2::zeros((3, 2))).unwrap();
        assert!(grads.tensors.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }

    /// Central finite differences through the same forward path.
    fn fd_policy(
        params: &PolicyParams,
        cfg: &NetConfig,
        obs: &Array2<f64>,
        coeff: &Array2<f64>,
        tensor: usize,
        idx: usize,
        h: f64,
    ) -> f64 {
        let eval = |store: &ParamStore| -> f64 {
            let p = PolicyParams { store: store.clone() };
            let (means, _) = policy_forward(&p, cfg, obs).unwrap();
            (&means * coeff).sum()
        };
        let mut hi = params.store.clone();
        hi.tensors[tensor].data[idx] += h;
        let mut lo = params.store.clone();
        lo.tensors[tensor].data[idx] -= h;
        (eval(&hi) - eval(&lo)) / (2.0 * h)
    }

    #[test]
    fn exhaustive_gradient_check_small_net() {
        // Small enough to check every parameter of every tensor.
        let cfg = NetConfig {
            n_beams: 12,
            conv1: ConvSpec {
                filters: 4,
                kernel: 5,
                stride: 2,
            },
            conv2: ConvSpec {
                filters: 4,
                kernel: 3,
                stride: 2,
            },
            fc1: 8,
            fc2: 6,
        };
        cfg.validate().unwrap();
        let (p, _) = init_params(&cfg, 31);
        let mut rng = derive_stream(17, 4);
        let obs = random_obs(&cfg, &mut rng, 3);
        let coeff = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));

        let (_, cache) = policy_forward(&p, &cfg, &obs).unwrap();
        let grads = policy_backward(&p, &cfg, &cache, &coeff).unwrap();

        let h = 1e-4;
        for (ti, tensor) in p.store.tensors.iter().enumerate() {
            if tensor.name == LOG_STD_NAME {
                continue; // not part of the mean path
            }
            for idx in 0..tensor.len() {
                let fd = fd_policy(&p, &cfg, &obs, &coeff, ti, idx, h);
                let an = grads.tensors[ti].data[idx];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-3,
                    "{}[{}]: analytic {an} vs fd {fd}",
                    tensor.name,
                    idx
                );
            }
        }
    }
}
