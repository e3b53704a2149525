use std::fmt;

use crate::error::{NcsrError, Result};

/// Shape of a dense 4-D tensor laid out as (batch, channels, height, width).
pub type Shape = [usize; 4];

/// Dense row-major 4-D array of `f64` values.
///
/// Gradients live on the [`Tape`](super::Tape) node that owns a tensor, not on
/// the tensor itself, so a `Tensor` is a plain value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(&shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(NcsrError::shape("from_vec", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(&shape));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(NcsrError::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(NcsrError::shape(op, &self.shape, &shape));
        }
        Ok(())
    }

    /// Contiguous slice for batch element `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    /// Copy of batch element `n` as a batch-of-one tensor.
    pub fn select(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor {
            shape: [1, c, h, w],
            data: self.item(n).to_vec(),
        }
    }

    /// Stack batch-of-one (or larger) tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| NcsrError::InvalidArgument("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(NcsrError::shape("stack", &first.shape, &t.shape));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if start + len > c {
            return Err(NcsrError::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let base = ni * c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + (start + len) * hw]);
        }
        Ok(Tensor {
            shape: [n, len, h, w],
            data,
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| NcsrError::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(NcsrError::shape("concat_channels", &first.shape, &p.shape));
            }
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for ni in 0..n {
            for p in parts {
                let len = p.shape[1] * hw;
                data.extend_from_slice(&p.data[ni * len..(ni + 1) * len]);
            }
        }
        Ok(Tensor {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Space-to-channel rearrangement: (C, H, W) -> (4C, H/2, W/2).
    ///
    /// Output channel `4c + 2dy + dx` holds input channel `c` at offsets
    /// `(dy, dx)` of each 2x2 cell, so a 2x2 single-channel block
    /// `[[a, b], [c, d]]` becomes the channel vector `(a, b, c, d)`.
    pub fn squeeze2(&self) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "squeeze needs even spatial dims, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, 4 * c, ho, wo]);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let oc = 4 * ci + 2 * (y % 2) + (x % 2);
                        out.set(ni, oc, y / 2, x / 2, self.at(ni, ci, y, x));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact inverse of [`Tensor::squeeze2`].
    pub fn unsqueeze2(&self) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if c % 4 != 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "unsqueeze needs channels divisible by 4, got {c}"
            )));
        }
        let mut out = Tensor::zeros([n, c / 4, 2 * h, 2 * w]);
        for ni in 0..n {
            for oc in 0..c {
                let (ci, dy, dx) = (oc / 4, (oc % 4) / 2, oc % 2);
                for y in 0..h {
                    for x in 0..w {
                        out.set(ni, ci, 2 * y + dy, 2 * x + dx, self.at(ni, oc, y, x));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rotate every plane by `quarter_turns` x 90 degrees counter-clockwise.
    pub fn rot90(&self, quarter_turns: usize) -> Tensor {
        let mut t = self.clone();
        for _ in 0..quarter_turns % 4 {
            let [n, c, h, w] = t.shape;
            t = Tensor::from_fn([n, c, w, h], |ni, ci, y, x| t.at(ni, ci, x, w - 1 - y));
        }
        t
    }

    pub fn flip_horizontal(&self) -> Tensor {
        let w = self.shape[3];
        Tensor::from_fn(self.shape, |n, c, y, x| self.at(n, c, y, w - 1 - x))
    }

    /// Area-average pooling by an integer factor.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "avg_pool factor {factor} does not divide {h}x{w}"
            )));
        }
        let inv = 1.0 / (factor * factor) as f64;
        Ok(Tensor::from_fn([n, c, h / factor, w / factor], |ni, ci, y, x| {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.at(ni, ci, y * factor + dy, x * factor + dx);
                }
            }
            acc * inv
        }))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }
}
