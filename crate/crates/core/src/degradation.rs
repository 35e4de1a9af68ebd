//! Synthetic degradation `x = noise(down(shift(blur(z))))`.
//!
//! Each image draws its own anisotropic Gaussian kernel and sub-pixel shift
//! from a per-image random stream, so paired ground truth exists for
//! verification while the training side only ever sees the degraded set.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::io::{load_png, save_png, write_atomic};
use crate::imaging::resample::{reflect, translate};
use crate::imaging::{bicubic_resize, clamp_unit, Image, Scale, CHANNELS};

pub const MANIFEST_SCHEMA: &str = "cincgan.degradation-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    /// Per-axis blur standard deviation range, HR pixels.
    pub blur_sigma_range: (f64, f64),
    /// Per-axis translation range, HR pixels.
    pub shift_range: (f64, f64),
    /// Additive Gaussian noise standard deviation, intensity units.
    pub noise_sigma: f64,
    pub scale: u32,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            blur_sigma_range: (1.0, 3.0),
            shift_range: (-2.0, 2.0),
            noise_sigma: 0.02,
            scale: 4,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    /// No blur, shift or noise at unit scale.
    pub fn identity() -> Self {
        DegradationConfig {
            blur_sigma_range: (0.0, 0.0),
            shift_range: (0.0, 0.0),
            noise_sigma: 0.0,
            scale: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let (bl, bh) = self.blur_sigma_range;
        if !(0.0 <= bl && bl <= bh && bh.is_finite()) {
            errs.push(format!("degradation.blur_sigma_range ({bl}, {bh}) must satisfy 0 <= low <= high"));
        }
        let (sl, sh) = self.shift_range;
        if !(sl <= sh && sl.is_finite() && sh.is_finite()) {
            errs.push(format!("degradation.shift_range ({sl}, {sh}) must satisfy low <= high"));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            errs.push(format!("degradation.noise_sigma {} outside [0, 1]", self.noise_sigma));
        }
        if self.scale == 0 {
            errs.push("degradation.scale must be >= 1".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

/// Smallest odd size covering three standard deviations each side.
pub fn kernel_size_for(sigma: f64) -> usize {
    (2 * (3.0 * sigma).ceil() as usize + 1).max(3)
}

/// Rotated anisotropic Gaussian sampled on the integer grid and normalised.
///
/// Zero sigmas collapse that axis to the grid line through the centre; with
/// both zero the result is the discrete delta.
pub fn make_blur_kernel(sigma_x: f64, sigma_y: f64, angle: f64, size: usize) -> Result<BlurKernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "blur kernel size must be odd and positive, got {size}"
        )));
    }
    if !(sigma_x >= 0.0 && sigma_y >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blur sigmas must be non-negative, got ({sigma_x}, {sigma_y})"
        )));
    }
    let r = (size / 2) as isize;
    let (s, c) = angle.sin_cos();
    let sx = sigma_x.max(1e-6);
    let sy = sigma_y.max(1e-6);
    let mut weights = Vec::with_capacity(size * size);
    for i in -r..=r {
        for j in -r..=r {
            let (x, y) = (j as f64, i as f64);
            let u = c * x + s * y;
            let v = -s * x + c * y;
            weights.push((-(u * u) / (2.0 * sx * sx) - (v * v) / (2.0 * sy * sy)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(BlurKernel { size, weights })
}

/// 2-D correlation with reflective borders; size preserving, unclamped.
pub fn convolve(img: &Image, k: &BlurKernel) -> Image {
    let (h, w) = img.dims();
    let r = (k.size / 2) as isize;
    let mut out = vec![0.0; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let dst = (y * w + x) * CHANNELS;
            for ky in 0..k.size {
                let sy = reflect(y as isize + ky as isize - r, h);
                for kx in 0..k.size {
                    let wt = k.weights[ky * k.size + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    let sx = reflect(x as isize + kx as isize - r, w);
                    let src = (sy * w + sx) * CHANNELS;
                    for c in 0..CHANNELS {
                        out[dst + c] += wt * img.data()[src + c];
                    }
                }
            }
        }
    }
    Image::from_raw_unclamped(h, w, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub angle: f64,
    pub size: usize,
}

/// Everything drawn for one image; enough to replay its degradation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub stream: u64,
    pub kernel: KernelParams,
    pub shift: (f64, f64),
    pub noise_seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws the per-image parameters for `stream`.
pub fn draw_record(cfg: &DegradationConfig, stream: u64) -> DegradationRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let sigma_x = uniform(&mut rng, cfg.blur_sigma_range);
    let sigma_y = uniform(&mut rng, cfg.blur_sigma_range);
    let angle = uniform(&mut rng, (0.0, std::f64::consts::PI));
    let dy = uniform(&mut rng, cfg.shift_range);
    let dx = uniform(&mut rng, cfg.shift_range);
    let noise_seed = rng.next_u64();
    DegradationRecord {
        stream,
        kernel: KernelParams {
            sigma_x,
            sigma_y,
            angle,
            size: kernel_size_for(sigma_x.max(sigma_y)),
        },
        shift: (dy, dx),
        noise_seed,
    }
}

/// Blur, shift and downsample without noise.
pub fn degrade_noiseless(z: &Image, cfg: &DegradationConfig, rec: &DegradationRecord) -> Result<Image> {
    let (h, w) = z.dims();
    let s = cfg.scale as usize;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image is not divisible by scale {}",
            cfg.scale
        )));
    }
    let k = &rec.kernel;
    let kernel = make_blur_kernel(k.sigma_x, k.sigma_y, k.angle, k.size)?;
    let mut img = if kernel.weights[kernel.weights.len() / 2] == 1.0 {
        z.clone()
    } else {
        convolve(z, &kernel)
    };
    if rec.shift != (0.0, 0.0) {
        img = translate(&img, rec.shift.0, rec.shift.1);
    }
    let mut data = img.data().to_vec();
    clamp_unit(&mut data);
    let img = Image::from_raw_unclamped(h, w, data);
    bicubic_resize(&img, Scale::down(cfg.scale))
}

/// The clean LR counterpart of a degraded image: `z` translated by the
/// recorded shift and bicubic-downsampled, without blur or noise. Reserved
/// for evaluation.
pub fn clean_lr(z: &Image, cfg: &DegradationConfig, rec: &DegradationRecord) -> Result<Image> {
    let aligned = DegradationRecord {
        kernel: KernelParams {
            sigma_x: 0.0,
            sigma_y: 0.0,
            angle: 0.0,
            size: 1,
        },
        ..rec.clone()
    };
    degrade_noiseless(z, cfg, &aligned)
}

/// Full pipeline for one image; deterministic in `(cfg.seed, stream)`.
pub fn degrade_image(z: &Image, cfg: &DegradationConfig, stream: u64) -> Result<(Image, DegradationRecord)> {
    let rec = draw_record(cfg, stream);
    let img = degrade_noiseless(z, cfg, &rec)?;
    if cfg.noise_sigma == 0.0 {
        return Ok((img, rec));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rec.noise_seed);
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (h, w) = img.dims();
    let data = img
        .data()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Ok((Image::from_vec(h, w, data)?, rec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub hr_dims: (usize, usize),
    pub lr_dims: (usize, usize),
    #[serde(flatten)]
    pub record: DegradationRecord,
}

/// Per-image degradation log. The pairing fields exist for verification
/// only; the training path never opens this file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub config: DegradationConfig,
    pub records: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA || m.version != MANIFEST_VERSION {
            return Err(Error::Serde(format!(
                "{} is not a version {MANIFEST_VERSION} degradation manifest",
                path.display()
            )));
        }
        Ok(m)
    }
}

/// Sorted `*.png` files of a directory; a missing directory is an error.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Degrades every PNG in `hr_dir` into `out_dir` and writes the manifest
/// there. Image `i` (in sorted filename order) uses random stream `i`.
pub fn degrade_corpus(hr_dir: &Path, cfg: &DegradationConfig, out_dir: &Path) -> Result<Manifest> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let files = list_pngs(hr_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let z = load_png(path)?;
        let (x, record) = degrade_image(&z, cfg, i as u64).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        save_png(&x, &out_dir.join(&name))?;
        records.push(ManifestEntry {
            file: name,
            hr_dims: z.dims(),
            lr_dims: x.dims(),
            record,
        });
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        records,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}
