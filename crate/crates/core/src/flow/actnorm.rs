use super::FlowState;
use crate::error::{NcsrError, Result};
use crate::numerics::{Tape, Tensor};
use crate::params::{Bound, ParamId, ParamStore};

/// Per-channel affine `h' = exp(log_scale) * (h + bias)`.
///
/// Parameterized by the log of the scale `s`, so `s` can never reach zero
/// during training. Starts as the identity; data-dependent initialization
/// happens on the first forward pass with [`Bound::ddi`] set.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub name: String,
    pub channels: usize,
    pub log_scale: ParamId,
    pub bias: ParamId,
}

impl ActNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let log_scale = store.register(format!("{name}.log_scale"), Tensor::zeros([1, channels, 1, 1]));
        let bias = store.register(format!("{name}.bias"), Tensor::zeros([1, channels, 1, 1]));
        ActNorm {
            name: name.to_string(),
            channels,
            log_scale,
            bias,
        }
    }

    /// Set parameters from an explicit per-channel scale. Only `|s|` is kept.
    pub fn set_scale(&self, store: &mut ParamStore, scale: &[f64], bias: &[f64]) -> Result<()> {
        if scale.len() != self.channels || bias.len() != self.channels {
            return Err(NcsrError::shape("actnorm params", &[scale.len(), bias.len()], &[self.channels]));
        }
        if let Some(c) = scale.iter().position(|&s| s == 0.0) {
            return Err(NcsrError::InvalidArgument(format!("actnorm `{}` scale of channel {c} is zero", self.name)));
        }
        let logs = scale.iter().map(|s| s.abs().ln()).collect();
        store.set(self.log_scale, Tensor::from_vec([1, self.channels, 1, 1], logs)?)?;
        store.set(self.bias, Tensor::from_vec([1, self.channels, 1, 1], bias.to_vec())?)
    }

    /// Bias and log-scale that whiten `h` per channel.
    fn init_from(h: &Tensor) -> (Tensor, Tensor) {
        let [n, c, hh, ww] = h.shape();
        let count = (n * hh * ww) as f64;
        let mut bias = Tensor::zeros([1, c, 1, 1]);
        let mut logs = Tensor::zeros([1, c, 1, 1]);
        for ci in 0..c {
            let mut sum = 0.0;
            for ni in 0..n {
                for y in 0..hh {
                    for x in 0..ww {
                        sum += h.at(ni, ci, y, x);
                    }
                }
            }
            let mean = sum / count;
            let mut var = 0.0;
            for ni in 0..n {
                for y in 0..hh {
                    for x in 0..ww {
                        var += (h.at(ni, ci, y, x) - mean).powi(2);
                    }
                }
            }
            let std = (var / count).sqrt();
            bias.data_mut()[ci] = -mean;
            logs.data_mut()[ci] = if std > 1e-8 { -std.ln() } else { 0.0 };
        }
        (bias, logs)
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut Bound, state: FlowState) -> Result<FlowState> {
        let [_, c, hh, ww] = tape.shape(state.h);
        if c != self.channels {
            return Err(NcsrError::shape("actnorm", &tape.shape(state.h), &[self.channels]));
        }
        if p.ddi {
            let (bias, logs) = Self::init_from(tape.value(state.h));
            let bv = tape.constant(bias.clone());
            let lv = tape.constant(logs.clone());
            p.replace(self.bias, bv);
            p.replace(self.log_scale, lv);
            p.ddi_values.push((self.bias, bias));
            p.ddi_values.push((self.log_scale, logs));
        }
        let logs = p.var(self.log_scale);
        let shifted = tape.add(state.h, p.var(self.bias))?;
        let e = tape.exp(logs);
        let h = tape.mul(shifted, e)?;
        let total = tape.sum_all(logs);
        let ld = tape.scale(total, (hh * ww) as f64);
        let logdet = tape.add(state.logdet, ld)?;
        Ok(FlowState { h, logdet })
    }

    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState) -> Result<FlowState> {
        let [_, _, hh, ww] = tape.shape(state.h);
        let logs = p.var(self.log_scale);
        let neg = tape.neg(logs);
        let e = tape.exp(neg);
        let unscaled = tape.mul(state.h, e)?;
        let h = tape.sub(unscaled, p.var(self.bias))?;
        let total = tape.sum_all(logs);
        let ld = tape.scale(total, (hh * ww) as f64);
        let logdet = tape.sub(state.logdet, ld)?;
        Ok(FlowState { h, logdet })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::*;
    use crate::numerics::Rng;

    #[test]
    fn identity_at_construction() {
        let mut store = ParamStore::new();
        let an = ActNorm::new(&mut store, "an", 2);
        let mut rng = Rng::seed_from_u64(1);
        let x = rng.gaussian([2, 2, 3, 3], 1.0).unwrap();
        let (y, ld) = run_forward(&store, &x, |t, p, s| an.forward(t, p, s));
        assert_eq!(y, x);
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_two_adds_hw_log_two() {
        let mut store = ParamStore::new();
        let an = ActNorm::new(&mut store, "an", 1);
        an.set_scale(&mut store, &[2.0], &[0.0]).unwrap();
        let x = Tensor::full([1, 1, 2, 2], 1.5);
        let (y, ld) = run_forward(&store, &x, |t, p, s| an.forward(t, p, s));
        assert!(y.data().iter().all(|&v| (v - 3.0).abs() < 1e-15));
        assert!((ld[0] - 4.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_scale_rejected() {
        let mut store = ParamStore::new();
        let an = ActNorm::new(&mut store, "an", 2);
        assert!(an.set_scale(&mut store, &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn data_dependent_init_whitens_batch() {
        let mut store = ParamStore::new();
        let an = ActNorm::new(&mut store, "an", 3);
        let mut rng = Rng::seed_from_u64(2);
        let x = rng.gaussian([4, 3, 5, 5], 2.5).unwrap().map(|v| v + 0.7);
        let mut tape = Tape::new();
        let mut p = store.bind(&mut tape, false);
        p.ddi = true;
        let h = tape.constant(x);
        let st = FlowState::new(&mut tape, h);
        let out = an.forward(&mut tape, &mut p, st).unwrap();
        let y = tape.value(out.h);
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..25).map(move |i| (n, i)))
                .map(|(n, i)| y.at(n, c, i / 5, i % 5))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(mean.abs() < 1e-6);
            assert!((std - 1.0).abs() < 1e-6);
        }
        assert_eq!(p.ddi_values.len(), 2);
    }

    #[test]
    fn round_trip_and_jacobian() {
        let mut store = ParamStore::new();
        let an = ActNorm::new(&mut store, "an", 2);
        an.set_scale(&mut store, &[0.7, 1.9], &[0.3, -0.2]).unwrap();
        let mut rng = Rng::seed_from_u64(3);
        let x = rng.gaussian([1, 2, 2, 2], 1.0).unwrap();
        check_round_trip(&store, &x, |t, p, s| an.forward(t, p, s), |t, p, s| an.inverse(t, p, s));
        check_jacobian(&store, &x, |t, p, s| an.forward(t, p, s));
    }
}
