//! Optimization: the Adam update and the warmup + cosine-annealing
//! learning-rate schedule.

use super::Scalar;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair of buffers per parameter
/// tensor, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero-initialized state for parameters of the given lengths.
    pub fn new(param_lens: &[usize]) -> Self {
        AdamState {
            m: param_lens.iter().map(|&l| vec![T::zero(); l]).collect(),
            v: param_lens.iter().map(|&l| vec![T::zero(); l]).collect(),
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step applied in place.
///
/// `params` and `grads` must be parallel slices of tensors matching the
/// state's layout; mismatched lengths are a caller bug and panic.
pub fn adam_step<T: Scalar>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) {
    assert_eq!(
        params.len(),
        grads.len(),
        "params/grads tensor count mismatch"
    );
    assert_eq!(
        params.len(),
        state.m.len(),
        "params/state tensor count mismatch"
    );
    state.t += 1;
    let b1 = T::fr(config.beta1);
    let b2 = T::fr(config.beta2);
    let one = T::one();
    // Bias corrections 1−βᵗ.
    let c1 = T::fr(1.0 - config.beta1.powi(state.t as i32));
    let c2 = T::fr(1.0 - config.beta2.powi(state.t as i32));
    let lr = T::fr(config.lr);
    let eps = T::fr(config.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.len(), g.len(), "param/grad length mismatch");
        assert_eq!(p.len(), m.len(), "param/state length mismatch");
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Learning rate at `epoch` (0-based) out of `total`: linear warmup to
/// `base_lr` over `warmup` epochs (epoch e gets `base_lr·(e+1)/warmup`),
/// then cosine annealing `base_lr·(1+cos(π·t))/2` with `t` running from 0
/// at the end of warmup to 1 at the final epoch.
pub fn cosine_lr(epoch: usize, total: usize, warmup: usize, base_lr: f64) -> f64 {
    assert!(
        epoch < total,
        "epoch {epoch} out of range for {total} epochs"
    );
    if epoch < warmup {
        return base_lr * (epoch + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return base_lr;
    }
    let t = (epoch - warmup) as f64 / span as f64;
    base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}
