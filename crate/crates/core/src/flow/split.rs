use super::{CondNet, FlowState};
use crate::error::{NcsrError, Result};
use crate::numerics::{Tape, Var};
use crate::params::{Bound, ParamStore};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-batch-element Gaussian log-density `(N, 1, 1, 1)` of `z` under
/// `N(mean, exp(log_std)^2)`; absent parameters mean 0.
pub fn gaussian_logp(tape: &mut Tape, z: Var, mean: Option<Var>, log_std: Option<Var>) -> Result<Var> {
    let [_, c, h, w] = tape.shape(z);
    let centred = match mean {
        Some(m) => tape.sub(z, m)?,
        None => z,
    };
    let standardized = match log_std {
        Some(ls) => {
            let neg = tape.neg(ls);
            let inv = tape.exp(neg);
            tape.mul(centred, inv)?
        }
        None => centred,
    };
    let sq = tape.square(standardized);
    let mut term = tape.scale(sq, -0.5);
    if let Some(ls) = log_std {
        term = tape.sub(term, ls)?;
    }
    let per = tape.sum_batch(term);
    Ok(tape.affine(per, 1.0, -HALF_LN_2PI * (c * h * w) as f64))
}

/// Factor out the second half of the channels as a latent scored under a
/// Gaussian whose mean and log-std come from the retained half.
#[derive(Clone, Debug)]
pub struct Split {
    pub name: String,
    pub channels: usize,
    /// `None` forces a standard-normal prior.
    pub prior: Option<CondNet>,
}

#[derive(Clone, Copy, Debug)]
pub struct SplitOutput {
    pub state: FlowState,
    pub z: Var,
    pub logp: Var,
}

/// How the inverse obtains the factored-out half.
#[derive(Clone, Copy, Debug)]
pub enum SplitLatent {
    /// Use this latent exactly (e.g. one recorded by the forward pass).
    Exact(Var),
    /// `z = mean + temperature * std * eps`.
    Noise { eps: Var, temperature: f64 },
}

impl Split {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, hidden: usize, conditional: bool) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(NcsrError::InvalidArgument(format!("split `{name}` needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        let prior = conditional.then(|| CondNet::new(store, &format!("{name}.prior"), half, hidden, 2 * half));
        Ok(Split {
            name: name.to_string(),
            channels,
            prior,
        })
    }

    fn prior_params(&self, tape: &mut Tape, p: &Bound, retained: Var) -> Result<(Option<Var>, Option<Var>)> {
        match &self.prior {
            None => Ok((None, None)),
            Some(net) => {
                let half = self.channels / 2;
                let out = net.forward(tape, p, retained)?;
                Ok((Some(tape.slice_channels(out, 0, half)?), Some(tape.slice_channels(out, half, half)?)))
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, state: FlowState) -> Result<SplitOutput> {
        let c = tape.shape(state.h)[1];
        if c != self.channels {
            return Err(NcsrError::shape("split", &tape.shape(state.h), &[self.channels]));
        }
        let half = c / 2;
        let retained = tape.slice_channels(state.h, 0, half)?;
        let z = tape.slice_channels(state.h, half, half)?;
        let (mean, log_std) = self.prior_params(tape, p, retained)?;
        let logp = gaussian_logp(tape, z, mean, log_std)?;
        Ok(SplitOutput {
            state: FlowState {
                h: retained,
                logdet: state.logdet,
            },
            z,
            logp,
        })
    }

    /// Rebuild the pre-split activation; returns it and the latent used.
    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState, latent: SplitLatent) -> Result<(FlowState, Var)> {
        let c = tape.shape(state.h)[1];
        if 2 * c != self.channels {
            return Err(NcsrError::shape("split inverse", &tape.shape(state.h), &[self.channels / 2]));
        }
        let z = match latent {
            SplitLatent::Exact(z) => z,
            SplitLatent::Noise { eps, temperature } => {
                let (mean, log_std) = self.prior_params(tape, p, state.h)?;
                let scaled = tape.scale(eps, temperature);
                let noise = match log_std {
                    Some(ls) => {
                        let std = tape.exp(ls);
                        tape.mul(scaled, std)?
                    }
                    None => scaled,
                };
                match mean {
                    Some(m) => tape.add(m, noise)?,
                    None => noise,
                }
            }
        };
        let h = tape.concat(&[state.h, z])?;
        Ok((FlowState { h, logdet: state.logdet }, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn standard_prior_is_unit_gaussian_density() {
        let mut store = ParamStore::new();
        let split = Split::new(&mut store, "split", 4, 8, true).unwrap();
        let x = Rng::seed_from_u64(1).gaussian([2, 4, 3, 3], 1.0).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let h = tape.constant(x.clone());
        let st = FlowState::new(&mut tape, h);
        let out = split.forward(&mut tape, &p, st).unwrap();
        let lp = tape.value(out.logp).data().to_vec();
        for n in 0..2 {
            let removed = x.select(n).slice_channels(2, 2).unwrap();
            let want: f64 = removed.data().iter().map(|z| -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
            assert!((lp[n] - want).abs() < 1e-12);
        }
        assert_eq!(tape.shape(out.state.h), [2, 2, 3, 3]);
    }

    #[test]
    fn exact_inverse_and_zero_temperature() {
        let mut store = ParamStore::new();
        let split = Split::new(&mut store, "split", 4, 8, true).unwrap();
        let mut rng = Rng::seed_from_u64(2);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v += 0.2 * rng.standard_normal();
            }
        }
        let x = rng.gaussian([1, 4, 2, 2], 1.0).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let h = tape.constant(x.clone());
        let st = FlowState::new(&mut tape, h);
        let out = split.forward(&mut tape, &p, st).unwrap();
        let (back, _) = split.inverse(&mut tape, &p, out.state, SplitLatent::Exact(out.z)).unwrap();
        assert_eq!(tape.value(back.h), &x);

        let eps = tape.constant(rng.gaussian([1, 2, 2, 2], 1.0).unwrap());
        let (_, z0) = split
            .inverse(&mut tape, &p, out.state, SplitLatent::Noise { eps, temperature: 0.0 })
            .unwrap();
        // the prior mean, recomputed independently
        let net = split.prior.as_ref().unwrap();
        let o = net.forward(&mut tape, &p, out.state.h).unwrap();
        let mean = tape.value(o).slice_channels(0, 2).unwrap();
        assert_eq!(tape.value(z0), &mean);
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(Split::new(&mut ParamStore::new(), "s", 3, 8, false).is_err());
    }
}
