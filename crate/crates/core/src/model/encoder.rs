//! Residual-dense LR encoder and its per-level feature pyramid.

use super::ModelConfig;
use crate::error::{NcsrError, Result};
use crate::numerics::{Padding, Tape, Tensor, Var};
use crate::params::{fan_in_normal, Bound, ParamId, ParamStore};

const SLOPE: f64 = 0.2;
const RESIDUAL_SCALE: f64 = 0.2;

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, gain: f64) -> Self {
        let wn = format!("{name}.weight");
        let w = store.register(&wn, fan_in_normal(&wn, [cout, cin, 3, 3], gain));
        let b = store.register(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]));
        Conv { w, b, stride }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.stride, Padding::Same)
    }
}

/// Three densely connected convolutions with a scaled residual.
#[derive(Clone, Debug)]
struct DenseBlock {
    convs: Vec<Conv>,
}

impl DenseBlock {
    fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let growth = (width / 2).max(1);
        let convs = vec![
            Conv::new(store, &format!("{name}.conv1"), width, growth, 1, 2f64.sqrt()),
            Conv::new(store, &format!("{name}.conv2"), width + growth, growth, 1, 2f64.sqrt()),
            Conv::new(store, &format!("{name}.conv3"), width + 2 * growth, width, 1, 1.0),
        ];
        DenseBlock { convs }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let c1 = self.convs[0].apply(tape, p, x)?;
        let a1 = tape.leaky_relu(c1, SLOPE);
        let in2 = tape.concat(&[x, a1])?;
        let c2 = self.convs[1].apply(tape, p, in2)?;
        let a2 = tape.leaky_relu(c2, SLOPE);
        let in3 = tape.concat(&[x, a1, a2])?;
        let c3 = self.convs[2].apply(tape, p, in3)?;
        let r = tape.scale(c3, RESIDUAL_SCALE);
        tape.add(x, r)
    }
}

/// Resamples trunk features (at LR resolution) to one level's resolution:
/// nearest upsampling for finer levels, stride-2 convolutions for coarser.
#[derive(Clone, Debug)]
struct LevelHead {
    upsample: usize,
    downs: Vec<Conv>,
    head: Conv,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    first: Conv,
    blocks: Vec<DenseBlock>,
    trunk: Conv,
    heads: Vec<LevelHead>,
    pub width: usize,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Self {
        let w = cfg.encoder_width;
        let first = Conv::new(store, "encoder.first", 3, w, 1, 1.0);
        let blocks = (0..cfg.encoder_blocks)
            .map(|i| DenseBlock::new(store, &format!("encoder.block{i}"), w))
            .collect();
        let trunk = Conv::new(store, "encoder.trunk", w, w, 1, 1.0);
        let heads = (1..=cfg.levels)
            .map(|level| {
                let level_div = 1usize << level;
                let (upsample, n_down) = if level_div <= cfg.scale_factor {
                    (cfg.scale_factor / level_div, 0)
                } else {
                    (1, (level_div / cfg.scale_factor).trailing_zeros() as usize)
                };
                let downs = (0..n_down)
                    .map(|i| Conv::new(store, &format!("encoder.level{level}.down{i}"), w, w, 2, 2f64.sqrt()))
                    .collect();
                let head = Conv::new(store, &format!("encoder.level{level}.head"), w, w, 1, 1.0);
                LevelHead { upsample, downs, head }
            })
            .collect();
        Encoder {
            first,
            blocks,
            trunk,
            heads,
            width: w,
        }
    }

    /// One encoding per level, spatially aligned with that level's flow
    /// activations.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, y: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(y);
        if shape[1] != 3 {
            return Err(NcsrError::InvalidArgument(format!("LR image must have 3 channels, got {}", shape[1])));
        }
        let f0 = self.first.apply(tape, p, y)?;
        let mut f = f0;
        for b in &self.blocks {
            f = b.apply(tape, p, f)?;
        }
        let t = self.trunk.apply(tape, p, f)?;
        let feat = tape.add(f0, t)?;
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut u = if head.upsample > 1 { tape.upsample(feat, head.upsample) } else { feat };
            for d in &head.downs {
                let c = d.apply(tape, p, u)?;
                u = tape.leaky_relu(c, SLOPE);
            }
            out.push(head.head.apply(tape, p, u)?);
        }
        Ok(out)
    }
}
