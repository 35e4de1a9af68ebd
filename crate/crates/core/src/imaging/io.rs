//! 8-bit RGB PNG codec.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

/// Decodes any 8-bit image the codec understands, dividing samples by 255.
pub fn load_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, data)
}

/// Quantises to 8 bits, rounding halves away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Codec {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(out.into_inner())
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("tmp")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Places images left to right on a black canvas of the tallest height.
pub fn side_by_side(panels: &[&Image]) -> Result<Image> {
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.width()).sum();
    let mut data = vec![0.0; h * w * CHANNELS];
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height() {
            for x in 0..p.width() {
                for c in 0..CHANNELS {
                    data[(y * w + x0 + x) * CHANNELS + c] = p.get(y, x, c);
                }
            }
        }
        x0 += p.width();
    }
    Image::from_vec(h, w, data)
}
