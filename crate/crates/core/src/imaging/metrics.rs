//! Full-reference quality metrics on RGB images in `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared error over all channels after stripping `border` pixels
/// from every edge.
pub fn mse(a: &Image, b: &Image, border: usize) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = a.dims();
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::InvalidArgument(format!(
            "border crop {border} leaves no pixels of a {h}x{w} image"
        )));
    }
    let mut sum = 0.0;
    for y in border..h - border {
        let row = y * w * CHANNELS;
        let (lo, hi) = (row + border * CHANNELS, row + (w - border) * CHANNELS);
        for (p, q) in a.data()[lo..hi].iter().zip(&b.data()[lo..hi]) {
            let d = p - q;
            sum += d * d;
        }
    }
    let count = (h - 2 * border) * (w - 2 * border) * CHANNELS;
    Ok(sum / count as f64)
}

/// Peak signal-to-noise ratio in dB with unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, border: usize) -> Result<f64> {
    let e = mse(a, b, border)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity over every valid 11x11 Gaussian window,
/// computed per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(CHANNELS).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(CHANNELS).copied().collect();
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let (mu_a, oh, ow) = filter_valid(&pa, h, w, &taps);
        let (mu_b, ..) = filter_valid(&pb, h, w, &taps);
        let (aa, ..) = filter_valid(&sq(&pa, &pa), h, w, &taps);
        let (bb, ..) = filter_valid(&sq(&pb, &pb), h, w, &taps);
        let (ab, ..) = filter_valid(&sq(&pa, &pb), h, w, &taps);
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / (oh * ow) as f64;
    }
    Ok((total / CHANNELS as f64).clamp(-1.0, 1.0))
}

pub fn evaluate_pair(pred: &Image, truth: &Image, border: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(pred, truth, border)?,
        ssim: ssim(pred, truth)?,
    })
}
