//! 2-D convolution lowered to matrix products.
//!
//! The input is unfolded into a `(C*k*k) x (N*Ho*Wo)` column matrix. Padding
//! is never materialised; every kernel tap maps through a precomputed source
//! index table, so reflection and zero padding share one code path and the
//! adjoint (col2im) folds reflected gradients back onto their sources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDesc {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl ConvDesc {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        out_len(len, self.kernel, self.stride, self.pad)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [self.out_channels, 1, 1, 1]
    }
}

pub fn out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Maps a padded coordinate back onto the unpadded axis.
///
/// Reflection excludes the edge sample (`[2 1 | 0 1 2 | 1 0]`) and repeats
/// with period `2 * (len - 1)`, so it stays defined when the pad exceeds the
/// axis length. A length-1 axis replicates its only sample.
pub fn source_index(pos: isize, len: usize, mode: PadMode) -> Option<usize> {
    match mode {
        PadMode::Zero => (pos >= 0 && (pos as usize) < len).then_some(pos as usize),
        PadMode::Reflect => {
            if len == 1 {
                return Some(0);
            }
            let period = 2 * (len as isize - 1);
            let m = pos.rem_euclid(period);
            Some(if m >= len as isize { period - m } else { m } as usize)
        }
    }
}

/// `table[tap * out + o]` is the source coordinate read by output `o` at kernel tap `tap`.
fn index_table(out: usize, len: usize, desc: &ConvDesc) -> Vec<Option<usize>> {
    let mut table = Vec::with_capacity(desc.kernel * out);
    for tap in 0..desc.kernel {
        for o in 0..out {
            let pos = (o * desc.stride + tap) as isize - desc.pad as isize;
            table.push(source_index(pos, len, desc.pad_mode));
        }
    }
    table
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl Geometry {
    fn new<T: Real>(x: &Tensor<T>, desc: &ConvDesc) -> Result<Self> {
        let [n, c, h, w] = x.shape();
        if c != desc.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                desc.in_channels
            )));
        }
        let (ho, wo) = match (desc.out_len(h), desc.out_len(w)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => {
                return Err(Error::Shape(format!(
                    "{h}x{w} input too small for k{} s{} p{} convolution",
                    desc.kernel, desc.stride, desc.pad
                )))
            }
        };
        Ok(Geometry {
            n,
            c,
            h,
            w,
            ho,
            wo,
            rows: index_table(ho, h, desc),
            cols: index_table(wo, w, desc),
        })
    }

    fn spatial_out(&self) -> usize {
        self.ho * self.wo
    }

    fn patch_len(&self, k: usize) -> usize {
        self.c * k * k
    }
}

fn im2col<T: Real>(x: &Tensor<T>, g: &Geometry, k: usize) -> Vec<T> {
    let hw_out = g.spatial_out();
    let row_stride = g.n * hw_out;
    let mut col = vec![T::zero(); g.patch_len(k) * row_stride];
    let data = x.data();
    for c in 0..g.c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &mut col[r * row_stride..(r + 1) * row_stride];
                let col_idx = &g.cols[kx * g.wo..(kx + 1) * g.wo];
                for n in 0..g.n {
                    let plane = &data[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let dst = &mut row[n * hw_out + oy * g.wo..n * hw_out + (oy + 1) * g.wo];
                        if let Some(iy) = g.rows[ky * g.ho + oy] {
                            let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                            for (d, ix) in dst.iter_mut().zip(col_idx) {
                                if let Some(ix) = ix {
                                    *d = src_row[*ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], g: &Geometry, k: usize) -> Tensor<T> {
    let hw_out = g.spatial_out();
    let row_stride = g.n * hw_out;
    let mut out = Tensor::zeros([g.n, g.c, g.h, g.w]);
    let data = out.data_mut();
    for c in 0..g.c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &col[r * row_stride..(r + 1) * row_stride];
                let col_idx = &g.cols[kx * g.wo..(kx + 1) * g.wo];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let Some(iy) = g.rows[ky * g.ho + oy] else {
                            continue;
                        };
                        let src = &row[n * hw_out + oy * g.wo..n * hw_out + (oy + 1) * g.wo];
                        let dst_row = base + iy * g.w;
                        for (v, ix) in src.iter().zip(col_idx) {
                            if let Some(ix) = ix {
                                data[dst_row + ix] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn forward<T: Real>(
    desc: &ConvDesc,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, desc)?;
    let k = desc.kernel;
    let o = desc.out_channels;
    let hw_out = g.spatial_out();
    let patch = g.patch_len(k);
    let col = im2col(x, &g, k);
    let mut out = Tensor::zeros([g.n, o, g.ho, g.wo]);
    let bias = bias.data();
    let out_data = out.data_mut();
    for n in 0..g.n {
        let block = &mut out_data[n * o * hw_out..(n + 1) * o * hw_out];
        for (ch, chunk) in block.chunks_mut(hw_out).enumerate() {
            chunk.fill(bias[ch]);
        }
        T::gemm(
            o,
            patch,
            hw_out,
            T::one(),
            weight.data(),
            patch,
            1,
            &col[n * hw_out..],
            g.n * hw_out,
            1,
            T::one(),
            block,
            hw_out,
            1,
        );
    }
    Ok(out)
}

/// Returns the input gradient and, when `param_grads` is given, accumulates
/// weight and bias gradients into it.
pub fn backward<T: Real>(
    desc: &ConvDesc,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let g = Geometry::new(x, desc)?;
    let k = desc.kernel;
    let o = desc.out_channels;
    let hw_out = g.spatial_out();
    let patch = g.patch_len(k);
    if grad_out.shape() != [g.n, o, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv grad {:?} does not match output {:?}",
            grad_out.shape(),
            [g.n, o, g.ho, g.wo]
        )));
    }
    let gout = grad_out.data();

    if let Some((gw, gb)) = param_grads {
        let col = im2col(x, &g, k);
        for n in 0..g.n {
            T::gemm(
                o,
                hw_out,
                patch,
                T::one(),
                &gout[n * o * hw_out..],
                hw_out,
                1,
                &col[n * hw_out..],
                1,
                g.n * hw_out,
                T::one(),
                gw.data_mut(),
                patch,
                1,
            );
        }
        let gb = gb.data_mut();
        for n in 0..g.n {
            for (ch, chunk) in gout[n * o * hw_out..(n + 1) * o * hw_out]
                .chunks(hw_out)
                .enumerate()
            {
                let s: f64 = chunk.iter().map(|v| v.f64()).sum();
                gb[ch] += T::of(s);
            }
        }
    }

    if !need_input_grad {
        return Ok(None);
    }
    let mut gcol = vec![T::zero(); patch * g.n * hw_out];
    for n in 0..g.n {
        T::gemm(
            patch,
            o,
            hw_out,
            T::one(),
            weight.data(),
            1,
            patch,
            &gout[n * o * hw_out..],
            hw_out,
            1,
            T::zero(),
            &mut gcol[n * hw_out..],
            g.n * hw_out,
            1,
        );
    }
    Ok(Some(col2im(&gcol, &g, k)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(desc: &ConvDesc, x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, wd] = x.shape();
        let ho = desc.out_len(h).unwrap();
        let wo = desc.out_len(wd).unwrap();
        let mut out = Tensor::zeros([n, desc.out_channels, ho, wo]);
        for bi in 0..n {
            for o in 0..desc.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for ci in 0..c {
                            for ky in 0..desc.kernel {
                                for kx in 0..desc.kernel {
                                    let py = (oy * desc.stride + ky) as isize - desc.pad as isize;
                                    let px = (ox * desc.stride + kx) as isize - desc.pad as isize;
                                    let (Some(iy), Some(ix)) = (
                                        source_index(py, h, desc.pad_mode),
                                        source_index(px, wd, desc.pad_mode),
                                    ) else {
                                        continue;
                                    };
                                    acc += x.at(bi, ci, iy, ix) * w.at(o, ci, ky, kx);
                                }
                            }
                        }
                        let idx = out.index(bi, o, oy, ox);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7)
            .map(|p| source_index(p, 4, PadMode::Reflect).unwrap())
            .collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(source_index(-1, 1, PadMode::Reflect), Some(0));
        assert_eq!(source_index(-1, 4, PadMode::Zero), None);
    }

    #[test]
    fn matches_direct_convolution() {
        for (k, s, p, mode) in [
            (3, 1, 1, PadMode::Reflect),
            (7, 1, 3, PadMode::Reflect),
            (4, 2, 1, PadMode::Zero),
            (4, 1, 1, PadMode::Zero),
        ] {
            let desc = ConvDesc {
                in_channels: 2,
                out_channels: 3,
                kernel: k,
                stride: s,
                pad: p,
                pad_mode: mode,
            };
            let x = Tensor::from_fn([2, 2, 9, 8], |i| ((i * 37 % 17) as f64 - 8.0) / 7.0);
            let w = Tensor::from_fn(desc.weight_shape(), |i| ((i * 11 % 13) as f64 - 6.0) / 5.0);
            let b = Tensor::from_fn(desc.bias_shape(), |i| i as f64 * 0.1);
            let fast = forward(&desc, &x, &w, &b).unwrap();
            let slow = naive(&desc, &x, &w, &b);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let desc = ConvDesc {
            in_channels: 1,
            out_channels: 1,
            kernel: 4,
            stride: 1,
            pad: 0,
            pad_mode: PadMode::Zero,
        };
        let x = Tensor::<f64>::zeros([1, 1, 3, 3]);
        let w = Tensor::zeros(desc.weight_shape());
        let b = Tensor::zeros(desc.bias_shape());
        assert!(forward(&desc, &x, &w, &b).is_err());
    }
}
