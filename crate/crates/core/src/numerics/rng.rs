//! Seeded random streams.
//!
//! Every stochastic call takes an explicit [`Rng`]. The generator is ChaCha
//! with 8 rounds (`rand_chacha::ChaCha8Rng`), a counter-based stream whose
//! output is fixed by the seed on every platform. Gaussian draws use the
//! ziggurat sampler from `rand_distr`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{Shape, Tensor};
use crate::error::{NcsrError, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable position of an [`Rng`] stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from this generator's seed, e.g. one per
    /// worker or per image index.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// I.i.d. `N(0, sigma^2)` tensor. `sigma = 0` yields exact zeros without
    /// consuming randomness.
    pub fn gaussian(&mut self, shape: Shape, sigma: f64) -> Result<Tensor> {
        if !(sigma >= 0.0) {
            return Err(NcsrError::InvalidArgument(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(Tensor::zeros(shape));
        }
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = sigma * self.standard_normal();
        }
        Ok(t)
    }

    pub fn uniform_tensor(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.uniform(lo, hi);
        }
        t
    }
}
