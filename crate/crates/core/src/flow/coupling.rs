use super::{affine_forward, affine_inverse, bounded_scale, CondMode, ConditioningBundle, FlowState};
use crate::error::{NcsrError, Result};
use crate::numerics::{Padding, Tape, Tensor, Var};
use crate::params::{fan_in_normal, Bound, ParamId, ParamStore};

/// Two 3x3 convolutions with a ReLU between. The output layer starts at zero
/// so the affine layer it drives starts as the identity.
#[derive(Clone, Debug)]
pub struct CondNet {
    pub in_channels: usize,
    pub out_channels: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl CondNet {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, hidden: usize, out_channels: usize) -> Self {
        let w1_name = format!("{name}.conv1.weight");
        let w1 = store.register(&w1_name, fan_in_normal(&w1_name, [hidden, in_channels, 3, 3], 1.0));
        let b1 = store.register(format!("{name}.conv1.bias"), Tensor::zeros([1, hidden, 1, 1]));
        let w2 = store.register(format!("{name}.conv2.weight"), Tensor::zeros([out_channels, hidden, 3, 3]));
        let b2 = store.register(format!("{name}.conv2.bias"), Tensor::zeros([1, out_channels, 1, 1]));
        CondNet {
            in_channels,
            out_channels,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: Var) -> Result<Var> {
        let h = tape.conv2d(input, p.var(self.w1), Some(p.var(self.b1)), 1, Padding::Same)?;
        let h = tape.relu(h);
        tape.conv2d(h, p.var(self.w2), Some(p.var(self.b2)), 1, Padding::Same)
    }

    /// First-layer weight, e.g. to inspect or zero the columns that read the
    /// noise channels.
    pub fn input_weight(&self) -> ParamId {
        self.w1
    }

    pub fn output_weight(&self) -> ParamId {
        self.w2
    }

    /// Split the output head into (log-scale, shift) halves.
    fn heads(&self, tape: &mut Tape, out: Var, bound: f64) -> Result<(Var, Var)> {
        let half = self.out_channels / 2;
        let raw = tape.slice_channels(out, 0, half)?;
        let shift = tape.slice_channels(out, half, half)?;
        Ok((bounded_scale(tape, raw, bound), shift))
    }
}

/// Element-wise affine transform of all channels driven by the LR encoding
/// only: `h' = exp(s(u)) * h + b(u)`.
#[derive(Clone, Debug)]
pub struct AffineInjector {
    pub name: String,
    pub channels: usize,
    pub scale_bound: f64,
    pub net: CondNet,
}

impl AffineInjector {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cond_channels: usize, hidden: usize, scale_bound: f64) -> Self {
        AffineInjector {
            name: name.to_string(),
            channels,
            scale_bound,
            net: CondNet::new(store, name, cond_channels, hidden, 2 * channels),
        }
    }

    fn params(&self, tape: &mut Tape, p: &Bound, h: Var, cond: &ConditioningBundle) -> Result<(Var, Var)> {
        cond.check_aligned(tape, h)?;
        if tape.shape(h)[1] != self.channels {
            return Err(NcsrError::shape("affine_injector", &tape.shape(h), &[self.channels]));
        }
        let out = self.net.forward(tape, p, cond.u)?;
        self.net.heads(tape, out, self.scale_bound)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        let (s, b) = self.params(tape, p, state.h, cond)?;
        affine_forward(tape, state, s, b)
    }

    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        let (s, b) = self.params(tape, p, state.h, cond)?;
        affine_inverse(tape, state, s, b)
    }
}

/// Affine coupling: the first `ceil(C/2)` channels pass through and drive,
/// together with the conditioning, a scale and shift of the rest.
///
/// With `extra_channels > 0` the network also reads the bundle's extra
/// channels (squeezed noise or a noise-std map); this is the noise
/// conditional layer.
#[derive(Clone, Debug)]
pub struct CondAffineCoupling {
    pub name: String,
    pub channels: usize,
    pub extra_channels: usize,
    pub scale_bound: f64,
    pub net: CondNet,
}

impl CondAffineCoupling {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        cond_channels: usize,
        extra_channels: usize,
        hidden: usize,
        scale_bound: f64,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(NcsrError::InvalidArgument(format!("coupling `{name}` needs at least 2 channels, got {channels}")));
        }
        let pass = channels.div_ceil(2);
        let net = CondNet::new(store, name, pass + cond_channels + extra_channels, hidden, 2 * (channels - pass));
        Ok(CondAffineCoupling {
            name: name.to_string(),
            channels,
            extra_channels,
            scale_bound,
            net,
        })
    }

    pub fn pass_channels(&self) -> usize {
        self.channels.div_ceil(2)
    }

    /// Channel range of the first-layer input that reads the extra conditioning.
    pub fn extra_input_range(&self, cond_channels: usize) -> std::ops::Range<usize> {
        let start = self.pass_channels() + cond_channels;
        start..start + self.extra_channels
    }

    fn split(&self, tape: &mut Tape, p: &Bound, h: Var, cond: &ConditioningBundle) -> Result<(Var, Var, Var, Var)> {
        let c = tape.shape(h)[1];
        if c != self.channels {
            return Err(NcsrError::shape("cond_affine_coupling", &tape.shape(h), &[self.channels]));
        }
        cond.check_aligned(tape, h)?;
        let pass = self.pass_channels();
        let a = tape.slice_channels(h, 0, pass)?;
        let b = tape.slice_channels(h, pass, c - pass)?;
        let input = if self.extra_channels > 0 {
            let extra = cond.extra.ok_or_else(|| {
                NcsrError::InvalidArgument(format!("coupling `{}` needs noise conditioning but none was given", self.name))
            })?;
            if cond.mode == CondMode::LrOnly {
                return Err(NcsrError::InvalidArgument(format!(
                    "coupling `{}` reads extra channels but the bundle is LR-only",
                    self.name
                )));
            }
            tape.concat(&[a, cond.u, extra])?
        } else {
            tape.concat(&[a, cond.u])?
        };
        let out = self.net.forward(tape, p, input)?;
        let (s, t) = self.net.heads(tape, out, self.scale_bound)?;
        Ok((a, b, s, t))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        let (a, b, s, t) = self.split(tape, p, state.h, cond)?;
        let out = affine_forward(tape, FlowState { h: b, logdet: state.logdet }, s, t)?;
        Ok(FlowState {
            h: tape.concat(&[a, out.h])?,
            logdet: out.logdet,
        })
    }

    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState, cond: &ConditioningBundle) -> Result<FlowState> {
        let (a, b, s, t) = self.split(tape, p, state.h, cond)?;
        let out = affine_inverse(tape, FlowState { h: b, logdet: state.logdet }, s, t)?;
        Ok(FlowState {
            h: tape.concat(&[a, out.h])?,
            logdet: out.logdet,
        })
    }
}
