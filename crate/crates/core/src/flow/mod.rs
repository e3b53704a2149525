//! Invertible layers. Every layer maps a [`FlowState`] forward (data to
//! latent), adding its log-Jacobian-determinant per batch element, and back,
//! subtracting the same amount.

mod actnorm;
mod coupling;
mod invconv;
mod split;

pub use actnorm::ActNorm;
pub use coupling::{AffineInjector, CondAffineCoupling, CondNet};
pub use invconv::InvConv1x1;
pub use split::{gaussian_logp, Split, SplitLatent, SplitOutput};

use crate::error::{NcsrError, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::Bound;

/// Default bound on the log-scale of affine layers.
pub const DEFAULT_SCALE_BOUND: f64 = 2.0;

#[derive(Clone, Copy, Debug)]
pub struct FlowState {
    pub h: Var,
    /// Accumulated log-determinant, shape `(N, 1, 1, 1)`.
    pub logdet: Var,
}

impl FlowState {
    pub fn new(tape: &mut Tape, h: Var) -> Self {
        let n = tape.shape(h)[0];
        let logdet = tape.constant(Tensor::zeros([n, 1, 1, 1]));
        FlowState { h, logdet }
    }

    pub fn squeeze(self, tape: &mut Tape) -> Result<Self> {
        Ok(FlowState {
            h: tape.squeeze(self.h)?,
            logdet: self.logdet,
        })
    }

    pub fn unsqueeze(self, tape: &mut Tape) -> Result<Self> {
        Ok(FlowState {
            h: tape.unsqueeze(self.h)?,
            logdet: self.logdet,
        })
    }
}

/// What the extra conditioning channels of a coupling carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CondMode {
    LrOnly,
    /// Squeezed noise vector (noise conditional layer).
    LrAndNoise,
    /// Spatially constant map holding the noise standard deviation `c`.
    LrAndStd,
}

/// Conditioning inputs for one level.
#[derive(Clone, Copy, Debug)]
pub struct ConditioningBundle {
    pub u: Var,
    pub extra: Option<Var>,
    pub mode: CondMode,
}

impl ConditioningBundle {
    pub fn lr_only(u: Var) -> Self {
        ConditioningBundle {
            u,
            extra: None,
            mode: CondMode::LrOnly,
        }
    }

    pub(crate) fn check_aligned(&self, tape: &Tape, h: Var) -> Result<()> {
        let hs = tape.shape(h);
        for v in std::iter::once(self.u).chain(self.extra) {
            let s = tape.shape(v);
            if s[0] != hs[0] || s[2] != hs[2] || s[3] != hs[3] {
                return Err(NcsrError::shape("conditioning alignment", &s, &hs));
            }
        }
        Ok(())
    }
}

/// Squash raw network output into `(-bound, bound)`: `bound * (2 sigmoid(r) - 1)`.
/// Zero maps to exactly zero.
pub fn bounded_scale(tape: &mut Tape, raw: Var, bound: f64) -> Var {
    let s = tape.sigmoid(raw);
    tape.affine(s, 2.0 * bound, -bound)
}

/// `h' = exp(s) * h + b`, `logdet += sum(s)`.
pub fn affine_forward(tape: &mut Tape, state: FlowState, log_scale: Var, shift: Var) -> Result<FlowState> {
    let e = tape.exp(log_scale);
    let scaled = tape.mul(state.h, e)?;
    let h = tape.add(scaled, shift)?;
    let ld = tape.sum_batch(log_scale);
    let logdet = tape.add(state.logdet, ld)?;
    Ok(FlowState { h, logdet })
}

/// `h = (h' - b) * exp(-s)`, `logdet -= sum(s)`.
pub fn affine_inverse(tape: &mut Tape, state: FlowState, log_scale: Var, shift: Var) -> Result<FlowState> {
    let neg = tape.neg(log_scale);
    let e = tape.exp(neg);
    let centred = tape.sub(state.h, shift)?;
    let h = tape.mul(centred, e)?;
    let ld = tape.sum_batch(log_scale);
    let logdet = tape.sub(state.logdet, ld)?;
    Ok(FlowState { h, logdet })
}

/// The bijective (non-splitting) layers of a flow step.
#[derive(Clone, Debug)]
pub enum Layer {
    ActNorm(ActNorm),
    InvConv(InvConv1x1),
    Injector(AffineInjector),
    Coupling(CondAffineCoupling),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::ActNorm(l) => &l.name,
            Layer::InvConv(l) => &l.name,
            Layer::Injector(l) => &l.name,
            Layer::Coupling(l) => &l.name,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        match self {
            Layer::ActNorm(l) => l.forward(tape, p, state),
            Layer::InvConv(l) => l.forward(tape, p, state),
            Layer::Injector(l) => l.forward(tape, p, state, cond),
            Layer::Coupling(l) => l.forward(tape, p, state, cond),
        }
    }

    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        match self {
            Layer::ActNorm(l) => l.inverse(tape, p, state),
            Layer::InvConv(l) => l.inverse(tape, p, state),
            Layer::Injector(l) => l.inverse(tape, p, state, cond),
            Layer::Coupling(l) => l.inverse(tape, p, state, cond),
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_closed_form() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full([1, 1, 1, 1], 3.0));
        let s = tape.constant(Tensor::full([1, 1, 1, 1], 2f64.ln()));
        let b = tape.constant(Tensor::full([1, 1, 1, 1], 1.0));
        let st = FlowState::new(&mut tape, h);
        let out = affine_forward(&mut tape, st, s, b).unwrap();
        assert!((tape.value(out.h).data()[0] - 7.0).abs() < 1e-15);
        assert!((tape.value(out.logdet).data()[0] - 2f64.ln()).abs() < 1e-15);
        let back = affine_inverse(&mut tape, out, s, b).unwrap();
        assert!((tape.value(back.h).data()[0] - 3.0).abs() < 1e-15);
        assert_eq!(tape.value(back.logdet).data()[0], 0.0);
    }

    #[test]
    fn bounded_scale_zero_is_zero() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::from_vec([1, 1, 1, 3], vec![0.0, 50.0, -50.0]).unwrap());
        let s = bounded_scale(&mut tape, r, 2.0);
        let v = tape.value(s).data();
        assert_eq!(v[0], 0.0);
        assert!(v[1] <= 2.0 && v[1] > 1.99);
        assert!(v[2] >= -2.0 && v[2] < -1.99);
    }
}
