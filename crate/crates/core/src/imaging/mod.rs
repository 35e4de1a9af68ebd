//! Pixel-domain primitives: the RGB image container, geometric transforms,
//! resampling, quality metrics and PNG I/O.
//!
//! Images store interleaved `(row, column, channel)` samples in `[0, 1]`.
//! Networks consume `[-1, 1]`; [`to_model_range`] and [`from_model_range`]
//! are the only conversion points.

pub mod io;
pub mod metrics;
pub mod resample;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use metrics::{psnr, ssim, MetricReport, PSNR_CAP};
pub use resample::{bicubic_resize, Scale};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every sample into `[0, 1]`.
    pub fn from_vec(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} samples, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        clamp_unit(&mut data);
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::from_vec(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::from_vec(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn from_raw_unclamped(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Image {
            height,
            width,
            data,
        }
    }
}

pub(crate) fn clamp_unit(data: &mut [f64]) {
    for v in data {
        // NaN maps to 0 so the range invariant survives corrupted inputs.
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
}

/// Returns the `size x size` block whose top-left corner is `(top, left)`.
pub fn crop_patch(img: &Image, top: usize, left: usize, size: usize) -> Result<Image> {
    crop_rect(img, top, left, size, size)
}

pub fn crop_rect(img: &Image, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 || top + height > img.height || left + width > img.width {
        return Err(Error::InvalidArgument(format!(
            "crop {height}x{width} at ({top},{left}) does not fit {}x{}",
            img.height, img.width
        )));
    }
    let mut data = Vec::with_capacity(height * width * CHANNELS);
    for y in top..top + height {
        let start = (y * img.width + left) * CHANNELS;
        data.extend_from_slice(&img.data[start..start + width * CHANNELS]);
    }
    Ok(Image::from_raw_unclamped(height, width, data))
}

/// One of the eight symmetries of the square: `k % 4` quarter turns
/// (counter-clockwise), preceded by a horizontal flip when `k >= 4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);
    pub const ROT90: Dihedral = Dihedral(1);

    pub fn new(k: u8) -> Result<Self> {
        if k > 7 {
            return Err(Error::InvalidArgument(format!(
                "dihedral index {k} outside [0, 7]"
            )));
        }
        Ok(Dihedral(k))
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    fn flipped(self) -> bool {
        self.0 >= 4
    }

    fn turns(self) -> u8 {
        self.0 % 4
    }

    pub fn inverse(self) -> Dihedral {
        if self.flipped() {
            // A reflection is its own inverse.
            self
        } else {
            Dihedral((4 - self.turns()) % 4)
        }
    }

    /// Output dimensions for an input of the given dimensions.
    pub fn output_dims(self, height: usize, width: usize) -> (usize, usize) {
        if self.turns() % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Source coordinate read by output pixel `(y, x)`.
    fn source(self, y: usize, x: usize, height: usize, width: usize) -> (usize, usize) {
        // Undo the rotation, then the flip.
        let (oh, ow) = self.output_dims(height, width);
        let (sy, mut sx) = match self.turns() {
            0 => (y, x),
            // Counter-clockwise quarter turn: out(y, x) = in(x, W-1-y).
            1 => (x, width - 1 - y),
            2 => (height - 1 - y, width - 1 - x),
            _ => (height - 1 - x, y),
        };
        debug_assert!(y < oh && x < ow);
        if self.flipped() {
            sx = width - 1 - sx;
        }
        (sy, sx)
    }
}

/// Applies a dihedral symmetry; the result is a pure pixel permutation.
pub fn dihedral_transform(img: &Image, k: Dihedral) -> Image {
    let (oh, ow) = k.output_dims(img.height, img.width);
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = k.source(y, x, img.height, img.width);
            let s = (sy * img.width + sx) * CHANNELS;
            data.extend_from_slice(&img.data[s..s + CHANNELS]);
        }
    }
    Image::from_raw_unclamped(oh, ow, data)
}

/// Affine map `[0, 1] -> [-1, 1]` into a single-sample NCHW tensor.
pub fn to_model_range<T: Real>(img: &Image) -> Tensor<T> {
    let (h, w) = img.dims();
    let mut t = Tensor::zeros([1, CHANNELS, h, w]);
    let plane = h * w;
    let out = t.data_mut();
    for (i, px) in img.data.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            out[c * plane + i] = T::of(px[c] * 2.0 - 1.0);
        }
    }
    t
}

/// Inverse of [`to_model_range`] for one sample of a batch, clamped to `[0, 1]`.
pub fn from_model_range<T: Real>(t: &Tensor<T>, sample: usize) -> Result<Image> {
    let [n, c, h, w] = t.shape();
    if c != CHANNELS || sample >= n {
        return Err(Error::Shape(format!(
            "cannot read RGB sample {sample} from {:?}",
            t.shape()
        )));
    }
    let plane = h * w;
    let src = t.sample(sample);
    let mut data = Vec::with_capacity(plane * CHANNELS);
    for i in 0..plane {
        for ch in 0..CHANNELS {
            data.push((src[ch * plane + i].f64() + 1.0) * 0.5);
        }
    }
    Image::from_vec(h, w, data)
}

/// Scalar form of the model-range inverse.
pub fn unit_from_model(v: f64) -> f64 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

pub fn model_from_unit(v: f64) -> f64 {
    v * 2.0 - 1.0
}
