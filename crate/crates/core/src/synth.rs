//! Procedural HR images: gradients, soft-edged shapes and stripe textures.
//!
//! Stands in for a photographic corpus when none is available. Every image
//! is a pure function of `(seed, index)`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::io::save_png;
use crate::imaging::Image;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { cy: f64, cx: f64, hh: f64, hw: f64, angle: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    /// Signed distance proxy in pixels, negative inside.
    fn distance(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Rect { cy, cx, hh, hw, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u.abs() - hw).max(v.abs() - hh)
            }
            Shape::Ellipse { cy, cx, ry, rx } => {
                let r = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
                (r - 1.0) * ry.min(rx)
            }
        }
    }
}

struct Layer {
    shape: Shape,
    color: [f64; 3],
    /// Stripe frequency (radians per HR pixel, low enough to survive a x4
    /// downsample), orientation and contrast.
    stripes: Option<(f64, f64, f64)>,
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// One procedural image of the given size.
pub fn procedural_image(seed: u64, index: u64, height: usize, width: usize) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (hf, wf) = (height as f64, width as f64);
    let bg0 = color(&mut rng);
    let bg1 = color(&mut rng);
    let bg_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n_layers = rng.random_range(4..10);
    let layers: Vec<Layer> = (0..n_layers)
        .map(|_| {
            let cy = rng.random_range(0.0..hf);
            let cx = rng.random_range(0.0..wf);
            let scale = hf.min(wf);
            let shape = if rng.random_bool(0.5) {
                Shape::Rect {
                    cy,
                    cx,
                    hh: rng.random_range(0.05..0.3) * scale,
                    hw: rng.random_range(0.05..0.3) * scale,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            } else {
                Shape::Ellipse {
                    cy,
                    cx,
                    ry: rng.random_range(0.05..0.3) * scale,
                    rx: rng.random_range(0.05..0.3) * scale,
                }
            };
            let stripes = rng.random_bool(0.4).then(|| {
                (
                    rng.random_range(0.08..0.35),
                    rng.random_range(0.0..std::f64::consts::PI),
                    rng.random_range(0.1..0.35),
                )
            });
            Layer {
                shape,
                color: color(&mut rng),
                stripes,
            }
        })
        .collect();
    let (gs, gc) = bg_angle.sin_cos();
    let diag = (hf * hf + wf * wf).sqrt();
    Image::from_fn(height, width, |y, x, c| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let t = (0.5 + ((xf - wf / 2.0) * gc + (yf - hf / 2.0) * gs) / diag).clamp(0.0, 1.0);
        let mut v = bg0[c] * (1.0 - t) + bg1[c] * t;
        for layer in &layers {
            // Half-pixel soft edge.
            let alpha = (0.5 - layer.shape.distance(yf, xf)).clamp(0.0, 1.0);
            if alpha == 0.0 {
                continue;
            }
            let mut fg = layer.color[c];
            if let Some((freq, angle, amp)) = layer.stripes {
                let phase = freq * (xf * angle.cos() + yf * angle.sin());
                fg = (fg + amp * phase.sin()).clamp(0.0, 1.0);
            }
            v = v * (1.0 - alpha) + fg * alpha;
        }
        v
    })
}

/// Writes `count` images named `0001.png`, `0002.png`, ... with square sizes
/// drawn from `[min_size, max_size]` rounded down to a multiple of `multiple`.
pub fn write_procedural_corpus(
    dir: &Path,
    count: usize,
    seed: u64,
    (min_size, max_size): (usize, usize),
    multiple: usize,
) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4e54);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let raw = rng.random_range(min_size..=max_size);
        let side = (raw / multiple * multiple).max(multiple);
        let img = procedural_image(seed, i as u64, side, side)?;
        let path = dir.join(format!("{:04}.png", i + 1));
        save_png(&img, &path)?;
        out.push(path);
    }
    Ok(out)
}
