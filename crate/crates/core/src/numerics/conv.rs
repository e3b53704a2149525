//! 2-D convolution kernels (im2col + GEMM), used by the tape.

use super::tensor::Tensor;
use crate::error::{NcsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; with stride 1 and odd kernels the output keeps
    /// the input size.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geom {
    pub fn new(input: &Tensor, weight: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let [n, cin, h, w] = input.shape();
        let [cout, wcin, kh, kw] = weight.shape();
        if wcin != cin {
            return Err(NcsrError::shape("conv2d", &input.shape(), &weight.shape()));
        }
        if stride == 0 {
            return Err(NcsrError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let pad = match padding {
            Padding::Same => kh / 2,
            Padding::Valid => 0,
        };
        if kh != kw && padding == Padding::Same {
            return Err(NcsrError::InvalidArgument(
                "same padding needs a square kernel".into(),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(NcsrError::shape("conv2d", &input.shape(), &weight.shape()));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Geom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    #[inline]
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    #[inline]
    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Pointwise convolution where the input itself is the column matrix.
    #[inline]
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &Geom, cols: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *slot = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geom, dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, all row-major
/// unless the transposition flags say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents computed from m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = Geom::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(NcsrError::shape("conv2d bias", &b.shape(), &[g.cout]));
        }
    }
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros([g.n, g.cout, g.ho, g.wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    for ni in 0..g.n {
        let x = &input.data()[ni * in_len..(ni + 1) * in_len];
        let y = &mut out.data_mut()[ni * out_len..(ni + 1) * out_len];
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                y[co * p..(co + 1) * p].fill(bv);
            }
        }
        let colmat: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(g.cout, k, p, weight.data(), false, colmat, false, 1.0, y);
    }
    Ok(out)
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub(crate) fn backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let g = Geom::new(input, weight, stride, padding)?;
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let [need_x, need_w, need_b] = need;

    let mut dx = need_x.then(|| Tensor::zeros(input.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_b.then(|| Tensor::zeros([1, g.cout, 1, 1]));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };

    for ni in 0..g.n {
        let go = &grad_out.data()[ni * out_len..(ni + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, slot) in db.data_mut().iter_mut().enumerate() {
                *slot += go[co * p..(co + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[ni * in_len..(ni + 1) * in_len];
            let colmat: &[f64] = if g.is_pointwise() {
                x
            } else {
                im2col(x, &g, &mut cols);
                &cols
            };
            gemm(g.cout, p, k, go, false, colmat, true, 1.0, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[ni * in_len..(ni + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, g.cout, p, weight.data(), true, go, false, 1.0, dxi);
            } else {
                gemm(k, g.cout, p, weight.data(), true, go, false, 0.0, &mut cols);
                col2im(&cols, &g, dxi);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(input: &Tensor, weight: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Tensor {
        let [n, cin, h, w] = input.shape();
        let [cout, _, kh, kw] = weight.shape();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Tensor::from_fn([n, cout, ho, wo], |ni, co, oy, ox| {
            let mut acc = bias[co];
            for ci in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += weight.at(co, ci, ky, kx) * input.at(ni, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn sum_of_ones_centre() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = forward(&x, &w, None, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn pointwise_affine() {
        let x = Tensor::full([1, 1, 1, 1], 2.0);
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        let b = Tensor::full([1, 1, 1, 1], 0.5);
        let y = forward(&x, &w, Some(&b), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Rng::seed_from_u64(1);
        for (stride, padding, pad) in [(1, Padding::Same, 1), (2, Padding::Same, 1), (1, Padding::Valid, 0)] {
            let x = rng.gaussian([2, 3, 7, 6], 1.0).unwrap();
            let w = rng.gaussian([4, 3, 3, 3], 1.0).unwrap();
            let b = rng.gaussian([1, 4, 1, 1], 1.0).unwrap();
            let y = forward(&x, &w, Some(&b), stride, padding).unwrap();
            let want = naive(&x, &w, b.data(), stride, pad);
            assert!(y.max_abs_diff(&want).unwrap() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_reports_both_shapes() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let msg = forward(&x, &w, None, 1, Padding::Same).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }
}
