//! Per-channel batch normalisation.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.1;

/// Saved state for the training-mode backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

pub struct NormParams<'a, T> {
    pub gamma: &'a Tensor<T>,
    pub beta: &'a Tensor<T>,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>) -> Result<()> {
    if gamma.len() != x.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels applied to {:?}",
            gamma.len(),
            x.shape()
        )));
    }
    Ok(())
}

/// Normalises with batch statistics and folds them into the running estimates.
pub fn forward_train<T: Real>(
    x: &Tensor<T>,
    p: NormParams<'_, T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    check(x, p.gamma)?;
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut out = Tensor::zeros(x.shape());
    let mut normalized = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            sum += x.data()[off..off + plane].iter().map(|v| v.f64()).sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            sq += x.data()[off..off + plane]
                .iter()
                .map(|v| (v.f64() - mean).powi(2))
                .sum::<f64>();
        }
        let var = sq / count;
        let istd = 1.0 / (var + EPS).sqrt();
        inv_std.push(istd);
        let g = p.gamma.data()[ch].f64();
        let bt = p.beta.data()[ch].f64();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x.data()[i].f64() - mean) * istd;
                normalized.data_mut()[i] = T::of(xh);
                out.data_mut()[i] = T::of(g * xh + bt);
            }
        }
        let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
        let rm = &mut running_mean.data_mut()[ch];
        *rm = T::of((1.0 - MOMENTUM) * rm.f64() + MOMENTUM * mean);
        let rv = &mut running_var.data_mut()[ch];
        *rv = T::of((1.0 - MOMENTUM) * rv.f64() + MOMENTUM * unbiased);
    }
    Ok((out, NormCache { normalized, inv_std }))
}

pub fn forward_eval<T: Real>(
    x: &Tensor<T>,
    p: NormParams<'_, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<Tensor<T>> {
    check(x, p.gamma)?;
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        let istd = 1.0 / (running_var.data()[ch].f64() + EPS).sqrt();
        let scale = p.gamma.data()[ch].f64() * istd;
        let shift = p.beta.data()[ch].f64() - running_mean.data()[ch].f64() * scale;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                out.data_mut()[i] = T::of(x.data()[i].f64() * scale + shift);
            }
        }
    }
    Ok(out)
}

pub fn backward_train<T: Real>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut sums = Vec::with_capacity(c);
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let dy = grad_out.data()[i].f64();
                sum_dy += dy;
                sum_dy_xh += dy * cache.normalized.data()[i].f64();
            }
        }
        sums.push((sum_dy, sum_dy_xh));
        let k = gamma.data()[ch].f64() * cache.inv_std[ch] / count;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let dy = grad_out.data()[i].f64();
                let xh = cache.normalized.data()[i].f64();
                gx.data_mut()[i] = T::of(k * (count * dy - sum_dy - xh * sum_dy_xh));
            }
        }
    }
    if let Some((gg, gb)) = param_grads {
        for (ch, (sum_dy, sum_dy_xh)) in sums.into_iter().enumerate() {
            gg.data_mut()[ch] += T::of(sum_dy_xh);
            gb.data_mut()[ch] += T::of(sum_dy);
        }
    }
    gx
}

pub fn backward_eval<T: Real>(
    x: &Tensor<T>,
    p: NormParams<'_, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut acc = vec![(0.0, 0.0); c];
    for ch in 0..c {
        let istd = 1.0 / (running_var.data()[ch].f64() + EPS).sqrt();
        let scale = p.gamma.data()[ch].f64() * istd;
        let mean = running_mean.data()[ch].f64();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let dy = grad_out.data()[i].f64();
                gx.data_mut()[i] = T::of(dy * scale);
                acc[ch].0 += dy * (x.data()[i].f64() - mean) * istd;
                acc[ch].1 += dy;
            }
        }
    }
    if let Some((gg, gb)) = param_grads {
        for (ch, (dg, db)) in acc.into_iter().enumerate() {
            gg.data_mut()[ch] += T::of(dg);
            gb.data_mut()[ch] += T::of(db);
        }
    }
    gx
}
