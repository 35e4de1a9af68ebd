//! Adversarial, cycle, identity and total-variation losses with gradients.
//!
//! Every loss is a per-element mean over batch, channel and spatial axes and
//! returns its value (accumulated in `f64`) together with the gradient with
//! respect to its first argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

fn non_empty<T: Real>(t: &Tensor<T>, what: &str) -> Result<usize> {
    if t.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(t.len())
}

/// Mean of `(d - target)^2` and its gradient scaled by `scale`.
fn squared_to_target<T: Real>(d: &Tensor<T>, target: f64, scale: f64) -> Result<Loss<T>> {
    let n = non_empty(d, "adversarial loss")? as f64;
    let mut sum = 0.0;
    let k = T::of(2.0 * scale / n);
    let t = T::of(target);
    let grad = d.map(|v| {
        let e = v - t;
        k * e
    });
    for &v in d.data() {
        let e = v.f64() - target;
        sum += e * e;
    }
    Ok(Loss {
        value: scale * sum / n,
        grad,
    })
}

/// Least-squares generator loss: mean `(D(G(x)) - 1)^2`.
pub fn lsgan_g_loss<T: Real>(d_out: &Tensor<T>) -> Result<Loss<T>> {
    squared_to_target(d_out, 1.0, 1.0)
}

/// Least-squares discriminator loss `(mean (r - 1)^2 + mean f^2) / 2`.
/// Returns the gradients for the real and the fake responses.
pub fn lsgan_d_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    let r = squared_to_target(d_real, 1.0, 0.5)?;
    let f = squared_to_target(d_fake, 0.0, 0.5)?;
    Ok((r.value + f.value, r.grad, f.grad))
}

fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Loss<T>> {
    a.check_same_shape(b)?;
    let n = non_empty(a, "squared-error loss")? as f64;
    let k = T::of(2.0 / n);
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(a.shape());
    for ((g, &p), &q) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = p - q;
        sum += d.f64() * d.f64();
        *g = k * d;
    }
    Ok(Loss {
        value: sum / n,
        grad,
    })
}

/// Mean squared reconstruction error.
pub fn cycle_loss<T: Real>(reconstructed: &Tensor<T>, original: &Tensor<T>) -> Result<Loss<T>> {
    mse(reconstructed, original)
}

/// Mean absolute error; the gradient is zero where the arguments tie.
pub fn identity_loss_lr<T: Real>(g1_of_y: &Tensor<T>, y: &Tensor<T>) -> Result<Loss<T>> {
    g1_of_y.check_same_shape(y)?;
    let n = non_empty(g1_of_y, "identity loss")? as f64;
    let k = T::of(1.0 / n);
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(y.shape());
    for ((g, &p), &q) in grad.data_mut().iter_mut().zip(g1_of_y.data()).zip(y.data()) {
        let d = p - q;
        sum += d.f64().abs();
        *g = if d > T::zero() {
            k
        } else if d < T::zero() {
            -k
        } else {
            T::zero()
        };
    }
    Ok(Loss {
        value: sum / n,
        grad,
    })
}

/// Mean squared error between `SR(z')` and `z`.
pub fn identity_loss_hr<T: Real>(sr_of_zprime: &Tensor<T>, z: &Tensor<T>) -> Result<Loss<T>> {
    mse(sr_of_zprime, z)
}

/// `mean((dI/dh)^2) + mean((dI/dw)^2)` with forward differences.
pub fn tv_loss<T: Real>(img: &Tensor<T>) -> Result<Loss<T>> {
    let [n, c, h, w] = img.shape();
    non_empty(img, "tv loss")?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "tv loss needs at least 2x2 spatial extent, got {h}x{w}"
        )));
    }
    let nh = (n * c * (h - 1) * w) as f64;
    let nw = (n * c * h * (w - 1)) as f64;
    let (kh, kw) = (T::of(2.0 / nh), T::of(2.0 / nw));
    let (mut sh, mut sw) = (0.0, 0.0);
    let mut grad = Tensor::zeros(img.shape());
    let x = img.data();
    let g = grad.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h {
            for xx in 0..w {
                let i = base + y * w + xx;
                if y + 1 < h {
                    let d = x[i + w] - x[i];
                    sh += d.f64() * d.f64();
                    g[i + w] += kh * d;
                    g[i] -= kh * d;
                }
                if xx + 1 < w {
                    let d = x[i + 1] - x[i];
                    sw += d.f64() * d.f64();
                    g[i + 1] += kw * d;
                    g[i] -= kw * d;
                }
            }
        }
    }
    Ok(Loss {
        value: sh / nh + sw / nw,
        grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 10.0,
            w2: 5.0,
            w3: 0.5,
            lambda1: 10.0,
            lambda2: 5.0,
            lambda3: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
        .map(|(k, v)| format!("{prefix}.{k} = {v} must be a non-negative number"))
        .collect()
    }

    pub fn lr(&self) -> [f64; 3] {
        [self.w1, self.w2, self.w3]
    }

    pub fn hr(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    LrCycle,
    HrCycle,
}

/// Unweighted loss terms of one side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub gan: f64,
    pub cyc: f64,
    pub idt: f64,
    pub tv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub side: Side,
    pub gan: f64,
    pub cyc: f64,
    pub idt: f64,
    pub tv: f64,
    pub total: f64,
}

fn weighted(side: Side, p: LossParts, w: [f64; 3]) -> Result<LossBreakdown> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("loss weights {w:?} must be non-negative")));
    }
    Ok(LossBreakdown {
        side,
        gan: p.gan,
        cyc: p.cyc,
        idt: p.idt,
        tv: p.tv,
        total: p.gan + w[0] * p.cyc + w[1] * p.idt + w[2] * p.tv,
    })
}

/// `gan + w1 cyc + w2 idt + w3 tv`.
pub fn total_loss_lr(parts: LossParts, weights: &LossWeights) -> Result<LossBreakdown> {
    weighted(Side::LrCycle, parts, weights.lr())
}

/// `gan + lambda1 cyc + lambda2 idt + lambda3 tv`.
pub fn total_loss_hr(parts: LossParts, weights: &LossWeights) -> Result<LossBreakdown> {
    weighted(Side::HrCycle, parts, weights.hr())
}
