//! Training-time noise injection and dequantization.
//!
//! A noise level `c ~ U(0, M)` is drawn, HR noise `v ~ N(0, c^2 I)` is added
//! to the HR image and its area-average downsample `w` to the LR image, so
//! both carry the same noise realization. At inference the noise is an exact
//! zero vector.

use crate::error::{NcsrError, Result};
use crate::numerics::{Rng, Shape, Tensor};

/// Width of one 8-bit quantization bin in `[0, 1]` pixel units.
pub const DEQUANT_WIDTH: f64 = 1.0 / 256.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub c: f64,
    pub v: Tensor,
    pub w: Tensor,
    pub m: f64,
}

fn pool_factor(hr: Shape, lr: Shape) -> Result<usize> {
    if hr[0] != lr[0] || hr[1] != lr[1] || lr[2] == 0 || lr[3] == 0 || hr[2] % lr[2] != 0 || hr[3] % lr[3] != 0 || hr[2] / lr[2] != hr[3] / lr[3]
    {
        return Err(NcsrError::shape("noise resize", &hr, &lr));
    }
    Ok(hr[2] / lr[2])
}

/// Area-average resize of HR noise onto the LR grid.
pub fn resize_noise(v: &Tensor, lr_shape: Shape) -> Result<Tensor> {
    let f = pool_factor(v.shape(), lr_shape)?;
    v.avg_pool(f)
}

pub fn draw(rng: &mut Rng, hr_shape: Shape, lr_shape: Shape, m: f64) -> Result<NoiseSample> {
    if !(m >= 0.0) {
        return Err(NcsrError::InvalidArgument(format!("noise bound M must be >= 0, got {m}")));
    }
    let c = rng.uniform(0.0, m);
    draw_with_scale(rng, hr_shape, lr_shape, m, c)
}

/// As [`draw`], with the noise scale `c` already chosen.
pub fn draw_with_scale(rng: &mut Rng, hr_shape: Shape, lr_shape: Shape, m: f64, c: f64) -> Result<NoiseSample> {
    if !(0.0..=m).contains(&c) {
        return Err(NcsrError::InvalidArgument(format!("noise scale {c} outside [0, {m}]")));
    }
    pool_factor(hr_shape, lr_shape)?;
    let v = rng.gaussian(hr_shape, c)?;
    let w = resize_noise(&v, lr_shape)?;
    Ok(NoiseSample { c, v, w, m })
}

pub fn perturb(x: &Tensor, y: &Tensor, ns: &NoiseSample) -> Result<(Tensor, Tensor)> {
    Ok((x.add(&ns.v)?, y.add(&ns.w)?))
}

/// Add `U[0, 1/256)` noise to every element.
pub fn dequantize(x: &Tensor, rng: &mut Rng) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += rng.uniform(0.0, DEQUANT_WIDTH);
    }
    out
}

/// The all-zero condition used for sampling and evaluation.
pub fn inference_condition(hr_shape: Shape, lr_shape: Shape) -> NoiseSample {
    NoiseSample {
        c: 0.0,
        v: Tensor::zeros(hr_shape),
        w: Tensor::zeros(lr_shape),
        m: 0.0,
    }
}

/// Noise conditioning handed to the model for a whole batch: HR-shaped noise
/// plus one noise level per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBatch {
    pub v: Tensor,
    pub c: Vec<f64>,
}

impl NoiseBatch {
    pub fn zeros(hr_shape: Shape) -> Self {
        NoiseBatch {
            v: Tensor::zeros(hr_shape),
            c: vec![0.0; hr_shape[0]],
        }
    }

    pub fn from_samples(samples: &[NoiseSample]) -> Result<Self> {
        let vs: Vec<Tensor> = samples.iter().map(|s| s.v.clone()).collect();
        let mut c = Vec::new();
        for s in samples {
            c.extend(std::iter::repeat(s.c).take(s.v.batch()));
        }
        Ok(NoiseBatch { v: Tensor::stack(&vs)?, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bound_gives_zero_noise() {
        let mut rng = Rng::seed_from_u64(1);
        let ns = draw(&mut rng, [1, 3, 8, 8], [1, 3, 2, 2], 0.0).unwrap();
        assert_eq!(ns.c, 0.0);
        assert!(ns.v.data().iter().chain(ns.w.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn negative_bound_rejected() {
        assert!(draw(&mut Rng::seed_from_u64(1), [1, 3, 8, 8], [1, 3, 2, 2], -0.1).is_err());
    }

    #[test]
    fn level_moments() {
        let mut rng = Rng::seed_from_u64(2);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += draw(&mut rng, [1, 1, 2, 2], [1, 1, 1, 1], 0.2).unwrap().c;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.1).abs() < 0.005, "mean c {mean}");
    }

    #[test]
    fn conditional_variances() {
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..5 {
            let ns = draw(&mut rng, [1, 3, 64, 64], [1, 3, 16, 16], 0.2).unwrap();
            if ns.c < 0.02 {
                continue;
            }
            let var_v = ns.v.data().iter().map(|v| v * v).sum::<f64>() / ns.v.numel() as f64;
            assert!((var_v / (ns.c * ns.c) - 1.0).abs() < 0.05, "Var(v)/c^2 = {}", var_v / (ns.c * ns.c));
        }
        // area average of s x s i.i.d. values has variance c^2 / s^2
        let ns = loop {
            let ns = draw(&mut rng, [1, 3, 256, 256], [1, 3, 64, 64], 0.2).unwrap();
            if ns.c > 0.05 {
                break ns;
            }
        };
        let var_w = ns.w.data().iter().map(|v| v * v).sum::<f64>() / ns.w.numel() as f64;
        let want = ns.c * ns.c / 16.0;
        assert!((var_w / want - 1.0).abs() < 0.1, "Var(w) {var_w} vs {want}");
    }

    #[test]
    fn low_resolution_noise_is_derived_from_hr_noise() {
        let mut rng = Rng::seed_from_u64(4);
        let ns = draw(&mut rng, [1, 3, 16, 16], [1, 3, 4, 4], 0.1).unwrap();
        assert_eq!(ns.w, resize_noise(&ns.v, [1, 3, 4, 4]).unwrap());
    }

    #[test]
    fn perturb_is_addition() {
        let x = Tensor::full([1, 3, 4, 4], 0.5);
        let y = Tensor::full([1, 3, 2, 2], 0.5);
        let zero = inference_condition(x.shape(), y.shape());
        let (xp, yp) = perturb(&x, &y, &zero).unwrap();
        assert_eq!((xp, yp), (x.clone(), y.clone()));
        let ns = NoiseSample {
            c: 0.1,
            v: Tensor::full(x.shape(), 0.1),
            w: Tensor::full(y.shape(), 0.1),
            m: 0.1,
        };
        let (xp, _) = perturb(&x, &y, &ns).unwrap();
        assert!(xp.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
        assert!(perturb(&x, &x, &ns).is_err());
    }

    #[test]
    fn dequantization_support() {
        let x = Tensor::from_fn([1, 3, 8, 8], |_, c, y, xx| ((c * 64 + y * 8 + xx) % 256) as f64 / 255.0);
        let a = dequantize(&x, &mut Rng::seed_from_u64(5));
        let b = dequantize(&x, &mut Rng::seed_from_u64(6));
        for (d, o) in a.data().iter().zip(x.data()) {
            let delta = d - o;
            assert!((0.0..DEQUANT_WIDTH).contains(&delta));
        }
        assert_ne!(a, b);
    }
}
