//! Adam optimizer with bias-corrected moments and optional per-epoch
//! exponential learning-rate decay.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-epoch decay factor for `lr_t = lr · gammaᵉᵖᵒᶜʰ`; 1.0 disables decay.
    pub decay_gamma: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.00005, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_gamma: 0.99 }
    }
}

/// Per-parameter first/second moments, parallel to the [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> AdamState {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Effective learning rate for an epoch under exponential decay.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.cfg.lr * self.cfg.decay_gamma.powi(epoch as i32)
    }
}

/// One Adam update over every parameter. Gradients with NaN/Inf abort with a
/// diagnostic naming the parameter.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState, epoch: usize) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape("adam_step", "params", state.m.len(), params.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let cfg = state.cfg;
    let lr_t = state.lr_at_epoch(epoch);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for i in 0..params.len() {
        let (path, tensor) = params.at(i);
        let g = grads
            .get(path)
            .ok_or_else(|| Error::Config(format!("adam_step: no gradient for {path}")))?;
        if g.numel() != tensor.numel() {
            return Err(Error::shape("adam_step", "numel", tensor.numel(), g.numel()));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("adam_step: non-finite gradient in {path}")));
        }
        let shape = tensor.shape();
        let mut updated = tensor.data().to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, gv) in g.data().iter().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gv;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gv * gv;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            updated[j] -= lr_t * mhat / (vhat.sqrt() + cfg.eps);
        }
        params.replace_at(i, Tensor::new(shape, updated)?)?;
    }
    Ok(())
}
