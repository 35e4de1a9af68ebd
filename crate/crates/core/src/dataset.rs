//! Unpaired training corpus and evaluation listing.
//!
//! Domain X is a range of degraded LR images, domain Z a disjoint range of
//! HR images. Clean LR samples `y` are never stored: each one is the bicubic
//! downsample of the exact HR crop it is paired with.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degradation::list_pngs;
use crate::error::{Error, Result};
use crate::imaging::io::load_png;
use crate::imaging::{bicubic_resize, crop_patch, dihedral_transform, to_model_range, Dihedral, Image, Scale};
use crate::tensor::{Real, Tensor};

/// Maps numeric filename stems (`0007.png` -> 7) to paths.
fn index_dir(dir: &Path) -> Result<BTreeMap<u32, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_pngs(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if let Ok(i) = stem.parse::<u32>() {
            map.insert(i, path);
        }
    }
    Ok(map)
}

fn resolve(dir: &Path, range: &RangeInclusive<u32>) -> Result<Vec<PathBuf>> {
    let map = index_dir(dir)?;
    range
        .clone()
        .map(|i| {
            map.get(&i).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("image index {i} not found in {}", dir.display()))
            })
        })
        .collect()
}

/// Immutable after construction; images are decoded once.
#[derive(Clone, Debug)]
pub struct UnpairedSplit {
    pub lr_paths: Vec<PathBuf>,
    pub hr_paths: Vec<PathBuf>,
    pub lr_indices: RangeInclusive<u32>,
    pub hr_indices: RangeInclusive<u32>,
    pub lr_crop: usize,
    pub hr_crop: usize,
    pub scale: usize,
    lr_images: Vec<Image>,
    hr_images: Vec<Image>,
}

pub fn build_unpaired_split(
    lr_dir: &Path,
    hr_dir: &Path,
    lr_indices: RangeInclusive<u32>,
    hr_indices: RangeInclusive<u32>,
    lr_crop: usize,
    scale: usize,
) -> Result<UnpairedSplit> {
    if lr_indices.is_empty() || hr_indices.is_empty() {
        return Err(Error::InvalidArgument("split index ranges must be non-empty".into()));
    }
    if lr_indices.start() <= hr_indices.end() && hr_indices.start() <= lr_indices.end() {
        return Err(Error::PairingLeak(format!(
            "LR indices {}..={} overlap HR indices {}..={}",
            lr_indices.start(),
            lr_indices.end(),
            hr_indices.start(),
            hr_indices.end()
        )));
    }
    if lr_crop == 0 || scale == 0 {
        return Err(Error::InvalidArgument("crop size and scale must be positive".into()));
    }
    let hr_crop = lr_crop * scale;
    let lr_paths = resolve(lr_dir, &lr_indices)?;
    let hr_paths = resolve(hr_dir, &hr_indices)?;
    let load_all = |paths: &[PathBuf], crop: usize| -> Result<Vec<Image>> {
        paths
            .iter()
            .map(|p| {
                let img = load_png(p)?;
                if img.height() < crop || img.width() < crop {
                    return Err(Error::InvalidArgument(format!(
                        "{} is {}x{}, smaller than the {crop}x{crop} crop",
                        p.display(),
                        img.height(),
                        img.width()
                    )));
                }
                Ok(img)
            })
            .collect()
    };
    let lr_images = load_all(&lr_paths, lr_crop)?;
    let hr_images = load_all(&hr_paths, hr_crop)?;
    Ok(UnpairedSplit {
        lr_paths,
        hr_paths,
        lr_indices,
        hr_indices,
        lr_crop,
        hr_crop,
        scale,
        lr_images,
        hr_images,
    })
}

impl UnpairedSplit {
    pub fn lr_images(&self) -> &[Image] {
        &self.lr_images
    }

    pub fn hr_images(&self) -> &[Image] {
        &self.hr_images
    }

    /// Source image index (as numbered on disk) of the `i`-th LR entry.
    pub fn lr_source(&self, i: usize) -> u32 {
        self.lr_indices.start() + i as u32
    }

    pub fn hr_source(&self, i: usize) -> u32 {
        self.hr_indices.start() + i as u32
    }
}

/// Where one patch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub source: u32,
    pub top: usize,
    pub left: usize,
    pub transform: u8,
}

#[derive(Clone, Debug)]
pub struct TrainingBatch<T> {
    /// Degraded LR patches, `[N, 3, lr_crop, lr_crop]`.
    pub x: Tensor<T>,
    /// Clean LR patches, `[N, 3, lr_crop, lr_crop]`.
    pub y: Tensor<T>,
    /// HR patches, `[N, 3, hr_crop, hr_crop]`.
    pub z: Tensor<T>,
    pub x_origin: Vec<PatchOrigin>,
    pub z_origin: Vec<PatchOrigin>,
}

impl<T> TrainingBatch<T> {
    /// Digest of the patch provenance; equal digests mean equal data.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for o in self.x_origin.iter().chain(&self.z_origin) {
            h.update(o.source.to_le_bytes());
            h.update((o.top as u64).to_le_bytes());
            h.update((o.left as u64).to_le_bytes());
            h.update([o.transform]);
        }
        h.finalize().into()
    }
}

fn random_crop<R: Rng>(rng: &mut R, img: &Image, size: usize) -> Result<(Image, usize, usize)> {
    let top = rng.random_range(0..=img.height() - size);
    let left = rng.random_range(0..=img.width() - size);
    Ok((crop_patch(img, top, left, size)?, top, left))
}

/// Samples `batch_size` independent X patches and (y, z) pairs.
///
/// X patches and Z patches get independent dihedral transforms; within a
/// pair `z` is transformed first and `y` is its bicubic downsample.
pub fn sample_training_batch<T: Real, R: Rng>(
    split: &UnpairedSplit,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainingBatch<T>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut xs = Vec::with_capacity(batch_size);
    let mut ys = Vec::with_capacity(batch_size);
    let mut zs = Vec::with_capacity(batch_size);
    let mut x_origin = Vec::with_capacity(batch_size);
    let mut z_origin = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let xi = rng.random_range(0..split.lr_images.len());
        let (xc, top, left) = random_crop(rng, &split.lr_images[xi], split.lr_crop)?;
        let kx = Dihedral::new(rng.random_range(0..8))?;
        xs.push(to_model_range(&dihedral_transform(&xc, kx)));
        x_origin.push(PatchOrigin {
            source: split.lr_source(xi),
            top,
            left,
            transform: kx.index(),
        });

        let zi = rng.random_range(0..split.hr_images.len());
        let (zc, top, left) = random_crop(rng, &split.hr_images[zi], split.hr_crop)?;
        let kz = Dihedral::new(rng.random_range(0..8))?;
        let zc = dihedral_transform(&zc, kz);
        let yc = bicubic_resize(&zc, Scale::down(split.scale as u32))?;
        ys.push(to_model_range(&yc));
        zs.push(to_model_range(&zc));
        z_origin.push(PatchOrigin {
            source: split.hr_source(zi),
            top,
            left,
            transform: kz.index(),
        });
    }
    Ok(TrainingBatch {
        x: Tensor::stack(&xs)?,
        y: Tensor::stack(&ys)?,
        z: Tensor::stack(&zs)?,
        x_origin,
        z_origin,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub name: String,
    pub lr: PathBuf,
    pub gt: Option<PathBuf>,
}

/// Filename-sorted evaluation inputs, paired with ground truth by identical
/// filename when `gt_dir` is given.
pub fn list_eval_set(lr_dir: &Path, gt_dir: Option<&Path>) -> Result<Vec<EvalPair>> {
    let name = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let lr = list_pngs(lr_dir)?;
    let Some(gt_dir) = gt_dir else {
        return Ok(lr
            .into_iter()
            .map(|p| EvalPair {
                name: name(&p),
                lr: p,
                gt: None,
            })
            .collect());
    };
    let gt = list_pngs(gt_dir)?;
    let lr_names: Vec<String> = lr.iter().map(|p| name(p)).collect();
    let gt_names: Vec<String> = gt.iter().map(|p| name(p)).collect();
    if lr_names != gt_names {
        let missing: Vec<&String> = lr_names
            .iter()
            .filter(|n| !gt_names.contains(n))
            .chain(gt_names.iter().filter(|n| !lr_names.contains(n)))
            .take(5)
            .collect();
        return Err(Error::InvalidArgument(format!(
            "LR and ground-truth sets differ ({} vs {} files); unmatched: {missing:?}",
            lr_names.len(),
            gt_names.len()
        )));
    }
    Ok(lr
        .into_iter()
        .zip(gt)
        .map(|(l, g)| EvalPair {
            name: name(&l),
            lr: l,
            gt: Some(g),
        })
        .collect())
}
