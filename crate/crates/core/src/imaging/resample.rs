//! Cubic-convolution resampling (Keys kernel, `a = -0.5`).
//!
//! Downscaling widens the kernel by the inverse scale so every output sample
//! integrates over its footprint (antialiasing). Borders replicate the edge
//! sample. Every row of resampling weights is renormalised to unit sum.

use super::{clamp_unit, Image, CHANNELS};
use crate::error::{Error, Result};

pub const CUBIC_A: f64 = -0.5;

/// Positive rational scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    num: u32,
    den: u32,
}

impl Scale {
    pub const IDENTITY: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!("invalid scale {num}/{den}")));
        }
        Ok(Scale { num, den })
    }

    pub fn up(factor: u32) -> Self {
        Scale::new(factor, 1).expect("non-zero factor")
    }

    pub fn down(factor: u32) -> Self {
        Scale::new(1, factor).expect("non-zero factor")
    }

    pub fn ratio(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_identity(self) -> bool {
        self.num == self.den
    }

    pub fn apply(self, len: usize) -> usize {
        // round(len * num / den), halves rounded up.
        let n = len as u64 * self.num as u64;
        let d = self.den as u64;
        ((2 * n + d) / (2 * d)) as usize
    }
}

/// Keys cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse resampling matrix: for every output position the contributing
/// source indices and their normalised weights.
pub fn resize_weights(in_len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let (support, stretch) = if scale < 1.0 {
        (2.0 / scale, scale)
    } else {
        (2.0, 1.0)
    };
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize + 1;
            let hi = (center + support).floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            for j in lo..=hi {
                let w = cubic((j as f64 - center) * stretch);
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, in_len as isize - 1) as usize;
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

fn resample_rows(
    data: &[f64],
    h: usize,
    w: usize,
    weights: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let ow = weights.len();
    let mut out = vec![0.0; h * ow * CHANNELS];
    for y in 0..h {
        for (x, taps) in weights.iter().enumerate() {
            let dst = (y * ow + x) * CHANNELS;
            for &(s, wt) in taps {
                let src = (y * w + s) * CHANNELS;
                for c in 0..CHANNELS {
                    out[dst + c] += wt * data[src + c];
                }
            }
        }
    }
    out
}

fn resample_cols(
    data: &[f64],
    w: usize,
    weights: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let oh = weights.len();
    let mut out = vec![0.0; oh * w * CHANNELS];
    for (y, taps) in weights.iter().enumerate() {
        for &(s, wt) in taps {
            let src = &data[s * w * CHANNELS..(s + 1) * w * CHANNELS];
            let dst = &mut out[y * w * CHANNELS..(y + 1) * w * CHANNELS];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += wt * v;
            }
        }
    }
    out
}

/// Bicubic resize to `round(dims * scale)`; output is clamped to `[0, 1]`.
pub fn bicubic_resize(img: &Image, scale: Scale) -> Result<Image> {
    let (h, w) = img.dims();
    let (oh, ow) = (scale.apply(h), scale.apply(w));
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument(format!(
            "resizing {h}x{w} by {}/{} gives an empty image",
            scale.num, scale.den
        )));
    }
    if scale.is_identity() {
        return Ok(img.clone());
    }
    let r = scale.ratio();
    let wx = resize_weights(w, ow, r);
    let wy = resize_weights(h, oh, r);
    let horiz = resample_rows(img.data(), h, w, &wx);
    let mut out = resample_cols(&horiz, ow, &wy);
    clamp_unit(&mut out);
    Ok(Image::from_raw_unclamped(oh, ow, out))
}

/// Cubic interpolation weights for sampling at `base + frac` with
/// `frac in [0, 1)`: taps at offsets -1, 0, 1, 2.
fn interp_taps(frac: f64) -> [f64; 4] {
    [
        cubic(1.0 + frac),
        cubic(frac),
        cubic(1.0 - frac),
        cubic(2.0 - frac),
    ]
}

/// Mirror-reflect an index into `[0, len)` (edge sample not repeated).
pub fn reflect(i: isize, len: usize) -> usize {
    crate::nn::conv::source_index(i, len, crate::nn::PadMode::Reflect).expect("reflect is total")
}

/// Translates by a sub-pixel offset: `out(y, x) = in(y - dy, x - dx)`,
/// cubic interpolation, reflective borders. Not clamped.
pub fn translate(img: &Image, dy: f64, dx: f64) -> Image {
    let (h, w) = img.dims();
    let axis = |len: usize, shift: f64| -> Vec<[(usize, f64); 4]> {
        (0..len)
            .map(|i| {
                let pos = i as f64 - shift;
                let base = pos.floor();
                let t = interp_taps(pos - base);
                let b = base as isize;
                [
                    (reflect(b - 1, len), t[0]),
                    (reflect(b, len), t[1]),
                    (reflect(b + 1, len), t[2]),
                    (reflect(b + 2, len), t[3]),
                ]
            })
            .collect()
    };
    let wx: Vec<Vec<(usize, f64)>> = axis(w, dx).into_iter().map(|a| a.to_vec()).collect();
    let wy: Vec<Vec<(usize, f64)>> = axis(h, dy).into_iter().map(|a| a.to_vec()).collect();
    let horiz = resample_rows(img.data(), h, w, &wx);
    let out = resample_cols(&horiz, w, &wy);
    Image::from_raw_unclamped(h, w, out)
}
