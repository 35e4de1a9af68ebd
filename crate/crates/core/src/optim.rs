//! Adam with step-halving learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamDecl;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_halving_period: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            lr_init: 2e-4,
            lr_halving_period: 40_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            errs.push(format!(
                "{prefix}: need 0 < beta1 < beta2 < 1, got beta1 = {}, beta2 = {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            errs.push(format!("{prefix}.lr_init must be > 0, got {}", self.lr_init));
        }
        if !(self.epsilon > 0.0) {
            errs.push(format!("{prefix}.epsilon must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("{prefix}.weight_decay must be >= 0"));
        }
        if self.lr_halving_period == 0 {
            errs.push(format!("{prefix}.lr_halving_period must be >= 1"));
        }
        errs
    }
}

/// `lr_init * 2^-floor(iteration / period)`.
pub fn lr_at(iteration: u64, cfg: &OptimizerConfig) -> f64 {
    let halvings = iteration / cfg.lr_halving_period.max(1);
    cfg.lr_init * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}

/// First and second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(decls: &[ParamDecl]) -> Self {
        let zeros = || decls.iter().map(|d| Tensor::zeros(d.shape)).collect();
        Adam {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Clears the moments and the step count.
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.fill(T::zero());
        }
    }

    /// Applies one update to every trainable tensor.
    pub fn update(
        &mut self,
        cfg: &OptimizerConfig,
        lr: f64,
        decls: &[ParamDecl],
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
    ) -> Result<()> {
        if params.len() != decls.len() || grads.len() != decls.len() || self.m.len() != decls.len() {
            return Err(Error::Shape("optimizer state does not match the parameter list".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
        let step_size = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(cfg.epsilon);
        let wd = T::of(cfg.weight_decay);
        for (i, d) in decls.iter().enumerate() {
            if !d.kind.trainable() {
                continue;
            }
            grads[i].check_same_shape(&params[i])?;
            let p = params[i].data_mut();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g[j] + wd * p[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let denom = v[j].sqrt() * inv_sqrt_bc2 + eps;
                p[j] -= step_size * m[j] / denom;
            }
        }
        Ok(())
    }
}
