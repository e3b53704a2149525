//! Separable bicubic resampling with pixel-centre alignment.
//!
//! Output pixel `j` samples the source at `(j + 0.5) / s - 0.5`. When
//! downscaling, the kernel is stretched by `1 / s` so every source pixel
//! contributes (antialiasing, the convention of MATLAB `imresize`). Source
//! indices outside the image are clamped to the nearest edge. Weights are
//! normalized per output pixel, so constant images stay constant.

use super::tensor::Tensor;
use crate::error::{NcsrError, Result};

pub const DEFAULT_KERNEL_A: f64 = -0.5;

/// Positive rational resize factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "resize factor {num}/{den} must be positive"
            )));
        }
        Ok(Scale { num, den })
    }

    pub fn up(factor: usize) -> Self {
        Scale { num: factor, den: 1 }
    }

    pub fn down(factor: usize) -> Self {
        Scale { num: 1, den: factor }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn apply(self, len: usize) -> Result<usize> {
        let prod = len * self.num;
        if prod % self.den != 0 || prod == 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "resizing {len} by {}/{} gives a non-integral size",
                self.num, self.den
            )));
        }
        Ok(prod / self.den)
    }
}

/// Cubic convolution kernel with free parameter `a`.
pub fn cubic(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-pixel (source index, weight) lists along one axis.
fn axis_weights(in_len: usize, out_len: usize, scale: f64, a: f64) -> Vec<Vec<(usize, f64)>> {
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|j| {
            let center = (j as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for i in lo..=hi {
                let w = cubic((center - i as f64) * stretch, a);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, in_len as isize - 1) as usize;
                total += w;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(slot) => slot.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

pub fn bicubic_resize(input: &Tensor, scale: Scale, kernel_a: f64) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    let (ho, wo) = (scale.apply(h)?, scale.apply(w)?);
    let s = scale.as_f64();
    let wx = axis_weights(w, wo, s, kernel_a);
    let wy = axis_weights(h, ho, s, kernel_a);

    let mut rows = Tensor::zeros([n, c, h, wo]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for (x, taps) in wx.iter().enumerate() {
                    let v = taps.iter().map(|&(i, wt)| wt * input.at(ni, ci, y, i)).sum();
                    rows.set(ni, ci, y, x, v);
                }
            }
        }
    }
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            for (y, taps) in wy.iter().enumerate() {
                for x in 0..wo {
                    let v = taps.iter().map(|&(i, wt)| wt * rows.at(ni, ci, i, x)).sum();
                    out.set(ni, ci, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Integer-factor bicubic downscale with the default kernel.
pub fn downscale(input: &Tensor, factor: usize) -> Result<Tensor> {
    bicubic_resize(input, Scale::down(factor), DEFAULT_KERNEL_A)
}
