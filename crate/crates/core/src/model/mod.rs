//! The full conditional flow: LR encoder, a squeeze / transition / K flow
//! steps / split pyramid, exact negative log-likelihood, and sampling.
//!
//! Forward level `l` (1-based, `l = 1` nearest the image) runs
//! squeeze, actnorm, 1x1 conv, then K steps of
//! actnorm, 1x1 conv, affine injector, [noise conditional coupling],
//! LR-conditional coupling, and finally splits off half its channels
//! (every level but the last).

mod config;
mod encoder;

pub use config::{ConditioningVariant, ModelConfig};
pub use encoder::Encoder;

use std::f64::consts::LN_2;

use crate::error::{NcsrError, Result};
use crate::flow::{
    gaussian_logp, ActNorm, AffineInjector, CondAffineCoupling, CondMode, ConditioningBundle, FlowState, InvConv1x1, Layer, Split,
    SplitLatent,
};
use crate::noise::NoiseBatch;
use crate::numerics::{Rng, Tape, Tensor, Var};
use crate::params::{Bound, ParamStore};

/// Bits per dimension of a discretized 8-bit image given the continuous
/// negative log-likelihood (nats) of its dequantized version.
pub fn bits_per_dim(nll_nats: f64, dims: usize) -> f64 {
    (nll_nats / dims as f64 + 256f64.ln()) / LN_2
}

#[derive(Clone, Debug)]
struct Level {
    index: usize,
    layers: Vec<Layer>,
    split: Option<Split>,
}

/// Parameter groups, used to organize gradient checks and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    ActNorm,
    InvConv,
    CouplingNet,
    Encoder,
    SplitPrior,
}

impl ParamClass {
    pub fn of(name: &str) -> Self {
        if name.starts_with("encoder.") {
            ParamClass::Encoder
        } else if name.contains(".prior.") {
            ParamClass::SplitPrior
        } else if name.contains(".actnorm.") {
            ParamClass::ActNorm
        } else if name.contains(".conv1x1.") {
            ParamClass::InvConv
        } else {
            ParamClass::CouplingNet
        }
    }

    pub const ALL: [ParamClass; 5] = [
        ParamClass::ActNorm,
        ParamClass::InvConv,
        ParamClass::CouplingNet,
        ParamClass::Encoder,
        ParamClass::SplitPrior,
    ];
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Split latents for levels `1..L-1`, then the final latent.
    pub latents: Vec<Var>,
    pub logdet: Var,
    pub logp: Var,
    /// Per-element negative log-likelihood in nats, `(N, 1, 1, 1)`.
    pub nll: Var,
}

/// Per-element likelihood report.
#[derive(Clone, Debug, PartialEq)]
pub struct NllReport {
    pub nats: Vec<f64>,
    pub bits_per_dim: Vec<f64>,
    pub logdet: Vec<f64>,
    pub latents: Vec<Tensor>,
}

/// Latents for the sampling pass.
pub enum LatentSpec<'a> {
    /// Use these exactly, in [`ForwardOutput::latents`] order.
    Exact(&'a [Tensor]),
    /// Draw every slot at the given temperature.
    Draw { temperature: f64, rng: &'a mut Rng },
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub x: Tensor,
    pub latents: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Ncsr {
    config: ModelConfig,
    pub params: ParamStore,
    encoder: Encoder,
    levels: Vec<Level>,
    actnorm_initialized: bool,
}

fn check_finite(tape: &Tape, state: &FlowState, layer: &str) -> Result<()> {
    if !tape.value(state.h).is_finite() || !tape.value(state.logdet).is_finite() {
        return Err(NcsrError::NonFinite { layer: layer.to_string() });
    }
    Ok(())
}

impl Ncsr {
    /// Build a model. `rng` only seeds the 1x1 convolution weights; every
    /// other parameter is initialized from a stream keyed by its name, so the
    /// parameter table layout and non-rotation values are a function of the
    /// config alone.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config);
        let cond = config.encoder_width;
        let hidden = config.coupling_hidden;
        let bound = config.scale_bound;
        let mut levels = Vec::with_capacity(config.levels);
        for l in 1..=config.levels {
            let c = config.level_channels(l);
            let mut layers = vec![
                Layer::ActNorm(ActNorm::new(&mut store, &format!("level{l}.transition.actnorm"), c)),
                Layer::InvConv(InvConv1x1::new(&mut store, &format!("level{l}.transition.conv1x1"), c, rng)),
            ];
            for k in 0..config.flow_steps_per_level {
                let p = format!("level{l}.step{k}");
                layers.push(Layer::ActNorm(ActNorm::new(&mut store, &format!("{p}.actnorm"), c)));
                layers.push(Layer::InvConv(InvConv1x1::new(&mut store, &format!("{p}.conv1x1"), c, rng)));
                layers.push(Layer::Injector(AffineInjector::new(&mut store, &format!("{p}.injector"), c, cond, hidden, bound)));
                if config.level_has_ncl(l) {
                    layers.push(Layer::Coupling(CondAffineCoupling::new(
                        &mut store,
                        &format!("{p}.ncl"),
                        c,
                        cond,
                        config.extra_channels(l),
                        hidden,
                        bound,
                    )?));
                }
                layers.push(Layer::Coupling(CondAffineCoupling::new(
                    &mut store,
                    &format!("{p}.coupling"),
                    c,
                    cond,
                    0,
                    hidden,
                    bound,
                )?));
            }
            let split = if l < config.levels {
                Some(Split::new(&mut store, &format!("level{l}.split"), c, hidden, config.conditional_prior)?)
            } else {
                None
            };
            levels.push(Level { index: l, layers, split });
        }
        Ok(Ncsr {
            config,
            params: store,
            encoder,
            levels,
            actnorm_initialized: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn set_actnorm_initialized(&mut self, v: bool) {
        self.actnorm_initialized = v;
    }

    /// Names of the layers at each level in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        self.levels
            .iter()
            .flat_map(|l| l.layers.iter().map(|x| x.name().to_string()).chain(l.split.iter().map(|s| s.name.clone())))
            .collect()
    }

    /// The noise conditional coupling layers, for inspection.
    pub fn ncl_layers(&self) -> Vec<&CondAffineCoupling> {
        self.levels
            .iter()
            .flat_map(|l| l.layers.iter())
            .filter_map(|layer| match layer {
                Layer::Coupling(c) if c.extra_channels > 0 => Some(c),
                _ => None,
            })
            .collect()
    }

    /// `(H, W)` of the LR image for an HR image of the given size.
    pub fn lr_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.config.scale_factor, w / self.config.scale_factor)
    }

    fn check_inputs(&self, x: [usize; 4], y: [usize; 4], noise: &NoiseBatch) -> Result<()> {
        let s = self.config.scale_factor;
        if x[1] != 3 {
            return Err(NcsrError::InvalidArgument(format!("HR image must have 3 channels, got {}", x[1])));
        }
        self.config.check_hr_size(x[2], x[3])?;
        if y != [x[0], 3, x[2] / s, x[3] / s] {
            return Err(NcsrError::shape("HR/LR pair", &x, &y));
        }
        if noise.v.shape() != x {
            return Err(NcsrError::shape("noise vector", &noise.v.shape(), &x));
        }
        if noise.c.len() != x[0] {
            return Err(NcsrError::shape("noise levels", &[noise.c.len()], &[x[0]]));
        }
        Ok(())
    }

    /// Extra conditioning per level (squeezed noise or std map), computed
    /// outside the flow so both directions see identical values.
    fn extras(&self, tape: &mut Tape, noise: &NoiseBatch) -> Result<Vec<Option<Var>>> {
        let mut out = Vec::with_capacity(self.levels.len());
        match self.config.conditioning_variant {
            ConditioningVariant::None => out.resize(self.levels.len(), None),
            ConditioningVariant::Noise => {
                let mut v = noise.v.clone();
                for _ in &self.levels {
                    v = v.squeeze2()?;
                    out.push(Some(tape.constant(v.clone())));
                }
            }
            ConditioningVariant::Std => {
                let [n, _, h, w] = noise.v.shape();
                for level in &self.levels {
                    let d = 1 << level.index;
                    let map = Tensor::from_fn([n, 1, h / d, w / d], |ni, _, _, _| noise.c[ni]);
                    out.push(Some(tape.constant(map)));
                }
            }
        }
        Ok(out)
    }

    fn bundle(&self, u: Var, extra: Option<Var>) -> ConditioningBundle {
        let mode = match self.config.conditioning_variant {
            ConditioningVariant::Noise => CondMode::LrAndNoise,
            ConditioningVariant::Std => CondMode::LrAndStd,
            ConditioningVariant::None => CondMode::LrOnly,
        };
        ConditioningBundle { u, extra, mode }
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, y: Var) -> Result<Vec<Var>> {
        let u = self.encoder.forward(tape, p, y)?;
        for v in &u {
            if !tape.value(*v).is_finite() {
                return Err(NcsrError::NonFinite { layer: "encoder".into() });
            }
        }
        Ok(u)
    }

    /// LR encoding pyramid as plain tensors.
    pub fn encode_lr(&self, y: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let u = self.encode(&mut tape, &p, yv)?;
        Ok(u.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Record the data-to-latent pass on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &mut Bound, x: Var, y: Var, noise: &NoiseBatch) -> Result<ForwardOutput> {
        self.check_inputs(tape.shape(x), tape.shape(y), noise)?;
        let n = tape.shape(x)[0];
        let u = self.encode(tape, p, y)?;
        let extras = self.extras(tape, noise)?;
        let mut state = FlowState::new(tape, x);
        let mut logp = tape.constant(Tensor::zeros([n, 1, 1, 1]));
        let mut latents = Vec::with_capacity(self.levels.len());
        for (i, level) in self.levels.iter().enumerate() {
            state = state.squeeze(tape)?;
            let cond = self.bundle(u[i], extras[i]);
            for layer in &level.layers {
                state = layer.forward(tape, p, state, &cond)?;
                check_finite(tape, &state, layer.name())?;
            }
            if let Some(split) = &level.split {
                let out = split.forward(tape, p, state)?;
                if !tape.value(out.logp).is_finite() {
                    return Err(NcsrError::NonFinite { layer: split.name.clone() });
                }
                latents.push(out.z);
                logp = tape.add(logp, out.logp)?;
                state = out.state;
            }
        }
        latents.push(state.h);
        let top = gaussian_logp(tape, state.h, None, None)?;
        logp = tape.add(logp, top)?;
        let ll = tape.add(logp, state.logdet)?;
        let nll = tape.neg(ll);
        Ok(ForwardOutput {
            latents,
            logdet: state.logdet,
            logp,
            nll,
        })
    }

    /// Exact negative log-likelihood of `x` given `(y, noise)`.
    pub fn nll(&self, x: &Tensor, y: &Tensor, noise: &NoiseBatch) -> Result<NllReport> {
        let mut tape = Tape::new();
        let mut p = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let out = self.forward(&mut tape, &mut p, xv, yv, noise)?;
        let dims = x.numel() / x.batch();
        let nats = tape.value(out.nll).data().to_vec();
        Ok(NllReport {
            bits_per_dim: nats.iter().map(|&v| bits_per_dim(v, dims)).collect(),
            nats,
            logdet: tape.value(out.logdet).data().to_vec(),
            latents: out.latents.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Batch-mean bits/dim and its gradient with respect to every parameter
    /// (in parameter-table order).
    pub fn loss_and_grads(&self, x: &Tensor, y: &Tensor, noise: &NoiseBatch) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let mut p = self.params.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let out = self.forward(&mut tape, &mut p, xv, yv, noise)?;
        let n = x.batch();
        let dims = x.numel() / n;
        let total = tape.sum_all(out.nll);
        let loss = tape.affine(total, 1.0 / (n * dims) as f64 / LN_2, 256f64.ln() / LN_2);
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        let grads = self
            .params
            .ids()
            .map(|id| {
                tape.grad(p.var(id))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()))
            })
            .collect();
        Ok((value, grads))
    }

    /// Data-dependent actnorm initialization from one batch.
    pub fn initialize_actnorm(&mut self, x: &Tensor, y: &Tensor, noise: &NoiseBatch) -> Result<()> {
        let mut tape = Tape::new();
        let mut p = self.params.bind(&mut tape, false);
        p.ddi = true;
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        self.forward(&mut tape, &mut p, xv, yv, noise)?;
        for (id, value) in p.ddi_values {
            self.params.set(id, value)?;
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    /// Latent-to-data pass. Draw order for [`LatentSpec::Draw`] is the final
    /// latent first, then each split from the deepest level outwards.
    pub fn decode(&self, y: &Tensor, noise: &NoiseBatch, latents: LatentSpec<'_>) -> Result<Decoded> {
        let s = self.config.scale_factor;
        let [n, _, lh, lw] = y.shape();
        let hr = [n, 3, lh * s, lw * s];
        self.check_inputs(hr, y.shape(), noise)?;
        let levels = self.levels.len();
        let (mut exact, mut draw) = match latents {
            LatentSpec::Exact(zs) => {
                if zs.len() != levels {
                    return Err(NcsrError::InvalidArgument(format!("expected {levels} latents, got {}", zs.len())));
                }
                (Some(zs), None)
            }
            LatentSpec::Draw { temperature, rng } => {
                if !(temperature >= 0.0) {
                    return Err(NcsrError::InvalidArgument(format!("temperature must be >= 0, got {temperature}")));
                }
                (None, Some((temperature, rng)))
            }
        };

        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let u = self.encode(&mut tape, &p, yv)?;
        let extras = self.extras(&mut tape, noise)?;

        let top_c = self.config.level_channels(levels);
        let d = 1 << levels;
        let top_shape = [n, top_c, hr[2] / d, hr[3] / d];
        let top = match (&mut exact, &mut draw) {
            (Some(zs), _) => {
                zs[levels - 1].expect_shape("final latent", top_shape)?;
                tape.constant(zs[levels - 1].clone())
            }
            (None, Some((t, rng))) => tape.constant(rng.gaussian(top_shape, 1.0)?.scale(*t)),
            _ => unreachable!(),
        };
        let mut used = vec![None; levels];
        used[levels - 1] = Some(top);
        let mut state = FlowState::new(&mut tape, top);

        for (i, level) in self.levels.iter().enumerate().rev() {
            if let Some(split) = &level.split {
                let latent = match (&mut exact, &mut draw) {
                    (Some(zs), _) => {
                        let [_, c, h, w] = tape.shape(state.h);
                        zs[i].expect_shape("split latent", [n, c, h, w])?;
                        SplitLatent::Exact(tape.constant(zs[i].clone()))
                    }
                    (None, Some((t, rng))) => {
                        let eps = rng.gaussian(tape.shape(state.h), 1.0)?;
                        SplitLatent::Noise {
                            eps: tape.constant(eps),
                            temperature: *t,
                        }
                    }
                    _ => unreachable!(),
                };
                let (st, z) = split.inverse(&mut tape, &p, state, latent)?;
                used[i] = Some(z);
                state = st;
            }
            let cond = self.bundle(u[i], extras[i]);
            for layer in level.layers.iter().rev() {
                state = layer.inverse(&mut tape, &p, state, &cond)?;
                check_finite(&tape, &state, layer.name())?;
            }
            state = state.unsqueeze(&mut tape)?;
        }
        Ok(Decoded {
            x: tape.value(state.h).clone(),
            latents: used.into_iter().map(|v| tape.value(v.expect("every slot filled")).clone()).collect(),
        })
    }

    /// `n_samples` super-resolved images for one LR image, conditioned on a
    /// zero noise vector, clamped to `[0, 1]`.
    pub fn sample(&self, y: &Tensor, temperature: f64, rng: &mut Rng, n_samples: usize) -> Result<Vec<Tensor>> {
        if y.batch() != 1 {
            return Err(NcsrError::InvalidArgument(format!("sample takes one LR image, got batch {}", y.batch())));
        }
        if n_samples == 0 {
            return Ok(Vec::new());
        }
        let ys = Tensor::stack(&vec![y.clone(); n_samples])?;
        let s = self.config.scale_factor;
        let noise = NoiseBatch::zeros([n_samples, 3, y.height() * s, y.width() * s]);
        let out = self.decode(&ys, &noise, LatentSpec::Draw { temperature, rng })?;
        Ok((0..n_samples).map(|i| out.x.select(i).clamp(0.0, 1.0)).collect())
    }

    /// Add `N(0, sigma^2)` to every parameter. Used to move away from the
    /// identity initialization in checks.
    pub fn jitter(&mut self, rng: &mut Rng, sigma: f64) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            for v in self.params.get_mut(id).data_mut() {
                *v += sigma * rng.standard_normal();
            }
        }
    }
}
