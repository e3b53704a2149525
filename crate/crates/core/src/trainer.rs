//! Maximum-likelihood training: augmented patch batches, dequantization,
//! noise injection, Adam with a halving schedule, logs and checkpoints.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::error::{NcsrError, Result};
use crate::kv;
use crate::model::Ncsr;
use crate::noise::{self, NoiseBatch, NoiseSample};
use crate::numerics::{downscale, Rng, Tensor};
use crate::params::ParamStore;

/// How training inputs are perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisePreset {
    /// Clean pairs.
    None,
    /// Noise on the HR target only; the LR condition stays clean.
    HrOnly,
    /// The same noise on HR and (resized) on LR.
    Matched,
}

impl fmt::Display for NoisePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoisePreset::None => "none",
            NoisePreset::HrOnly => "hr_only",
            NoisePreset::Matched => "matched",
        })
    }
}

impl FromStr for NoisePreset {
    type Err = NcsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoisePreset::None),
            "hr_only" => Ok(NoisePreset::HrOnly),
            "matched" => Ok(NoisePreset::Matched),
            other => Err(NcsrError::Config(format!("unknown noise preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_hr: usize,
    pub lr_init: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub halve_at: Vec<usize>,
    pub total_steps: usize,
    /// Global-norm clip; `0` disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub noise_preset: NoisePreset,
    /// Write a checkpoint every this many steps (`0`: final only).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            patch_hr: 64,
            lr_init: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            halve_at: vec![1100, 1650],
            total_steps: 2000,
            grad_clip_norm: 10.0,
            seed: 0,
            noise_preset: NoisePreset::Matched,
            checkpoint_every: 500,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Batch 18, 160x160 patches, milestones at 110K and 165K of 200K steps.
    pub fn paper_scale() -> Self {
        TrainConfig {
            batch_size: 18,
            patch_hr: 160,
            halve_at: vec![110_000, 165_000],
            total_steps: 200_000,
            checkpoint_every: 10_000,
            log_every: 100,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self, size_multiple: usize) -> Result<()> {
        let bad = |m: String| Err(NcsrError::Config(m));
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if self.patch_hr == 0 || self.patch_hr % size_multiple != 0 {
            return bad(format!(
                "train.patch_hr = {} is not a multiple of scale * 2^levels = {size_multiple}",
                self.patch_hr
            ));
        }
        if !(self.lr_init > 0.0) {
            return bad(format!("train.lr_init must be > 0, got {}", self.lr_init));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("train.epsilon must be > 0".into());
        }
        if self.halve_at.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("train.halve_at must be strictly increasing, got {:?}", self.halve_at));
        }
        if !(self.grad_clip_norm >= 0.0) {
            return bad("train.grad_clip_norm must be >= 0".into());
        }
        Ok(())
    }

    /// Learning rate in effect at `step` (1-based): halved once for every
    /// milestone at or before it.
    pub fn lr_at(&self, step: usize) -> f64 {
        let halvings = self.halve_at.iter().filter(|&&m| step >= m).count();
        self.lr_init * 0.5f64.powi(halvings as i32)
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("batch_size", self.batch_size.to_string()),
            e("patch_hr", self.patch_hr.to_string()),
            e("lr_init", kv::render_f64(self.lr_init)),
            e("beta1", kv::render_f64(self.beta1)),
            e("beta2", kv::render_f64(self.beta2)),
            e("epsilon", kv::render_f64(self.epsilon)),
            e("halve_at", kv::render_list(&self.halve_at)),
            e("total_steps", self.total_steps.to_string()),
            e("grad_clip_norm", kv::render_f64(self.grad_clip_norm)),
            e("seed", self.seed.to_string()),
            e("noise_preset", self.noise_preset.to_string()),
            e("checkpoint_every", self.checkpoint_every.to_string()),
            e("log_every", self.log_every.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = kv::parse_usize(key, value)?,
            "patch_hr" => self.patch_hr = kv::parse_usize(key, value)?,
            "lr_init" => self.lr_init = kv::parse_f64(key, value)?,
            "beta1" => self.beta1 = kv::parse_f64(key, value)?,
            "beta2" => self.beta2 = kv::parse_f64(key, value)?,
            "epsilon" => self.epsilon = kv::parse_f64(key, value)?,
            "halve_at" => self.halve_at = kv::parse_usize_list(key, value)?,
            "total_steps" => self.total_steps = kv::parse_usize(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = kv::parse_f64(key, value)?,
            "seed" => self.seed = kv::parse_u64(key, value)?,
            "noise_preset" => self.noise_preset = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = kv::parse_usize(key, value)?,
            "log_every" => self.log_every = kv::parse_usize(key, value)?,
            _ => return Err(NcsrError::Config(format!("unknown train key `{key}`"))),
        }
        Ok(())
    }
}

/// HR images usable for patches of a fixed size.
#[derive(Clone, Debug)]
pub struct TrainCorpus {
    images: Vec<Tensor>,
    patch: usize,
}

impl TrainCorpus {
    /// Keeps images with both sides `>= patch`; smaller ones are skipped with
    /// a warning. An empty result is an error.
    pub fn new(images: Vec<Tensor>, patch: usize) -> Result<Self> {
        let total = images.len();
        let images: Vec<Tensor> = images
            .into_iter()
            .enumerate()
            .filter(|(i, t)| {
                let ok = t.height() >= patch && t.width() >= patch && t.channels() == 3 && t.batch() == 1;
                if !ok {
                    log::warn!("skipping training image {i} of shape {:?}: smaller than {patch}x{patch}", t.shape());
                }
                ok
            })
            .map(|(_, t)| t)
            .collect();
        if images.is_empty() {
            return Err(NcsrError::Config(format!(
                "no usable training images ({total} given, none at least {patch}x{patch})"
            )));
        }
        Ok(TrainCorpus { images, patch })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Random crop, quarter turn and horizontal flip of one image.
pub fn augment(img: &Tensor, patch: usize, rng: &mut Rng) -> Tensor {
    let oy = rng.below(img.height() - patch + 1);
    let ox = rng.below(img.width() - patch + 1);
    let crop = Tensor::from_fn([1, 3, patch, patch], |_, c, y, x| img.at(0, c, y + oy, x + ox));
    let turned = crop.rot90(rng.below(4));
    if rng.below(2) == 1 {
        turned.flip_horizontal()
    } else {
        turned
    }
}

/// Visits every image once per epoch, in an order reshuffled each epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> Self {
        EpochSampler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            for i in (1..self.order.len()).rev() {
                self.order.swap(i, rng.below(i + 1));
            }
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// `(x, y)`: HR patches `(B, 3, p, p)` and their bicubic LR `(B, 3, p/s, p/s)`,
/// images drawn by `sampler`.
pub fn make_batch(
    corpus: &TrainCorpus,
    sampler: &mut EpochSampler,
    batch: usize,
    scale: usize,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    let mut xs = Vec::with_capacity(batch);
    let mut ys = Vec::with_capacity(batch);
    for _ in 0..batch {
        let img = &corpus.images[sampler.next(rng)];
        let hr = augment(img, corpus.patch, rng);
        ys.push(downscale(&hr, scale)?);
        xs.push(hr);
    }
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamOutcome {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub skipped: bool,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, epsilon: f64, clip: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Adam {
            beta1,
            beta2,
            epsilon,
            clip,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. Non-finite gradients leave parameters and moments
    /// untouched and report `skipped`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<AdamOutcome> {
        if grads.len() != self.m.len() {
            return Err(NcsrError::shape("adam gradients", &[grads.len()], &[self.m.len()]));
        }
        for (id, g) in params.ids().zip(grads) {
            g.expect_shape("adam gradient", params.get(id).shape())?;
        }
        let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum();
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            log::warn!("non-finite gradient norm, skipping update");
            return Ok(AdamOutcome { grad_norm, skipped: true });
        }
        let factor = if self.clip > 0.0 && grad_norm > self.clip { self.clip / grad_norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = params.get_mut(id).data_mut();
            for (i, &g0) in grads[k].data().iter().enumerate() {
                let g = g0 * factor;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(AdamOutcome { grad_norm, skipped: false })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub bits_per_dim: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

impl TrainRecord {
    pub const HEADER: &'static str = "step\tbits_per_dim\tlr\tgrad_norm\tseconds";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:e}\t{:.6}\t{:.3}",
            self.step, self.bits_per_dim, self.lr, self.grad_norm, self.seconds
        )
    }
}

/// Training inputs for one step: perturbed HR/LR and the noise the model
/// is told about. Noise scales are stratified over the batch: element `i`
/// draws `c` uniformly from its own slice of `[0, M)`, slices assigned in
/// random order, so each `c` is still `U(0, M)`.
pub fn perturb_batch(
    x: &Tensor,
    y: &Tensor,
    preset: NoisePreset,
    m: f64,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor, NoiseBatch)> {
    if preset == NoisePreset::None {
        return Ok((x.clone(), y.clone(), NoiseBatch::zeros(x.shape())));
    }
    let n = x.batch();
    let mut strata: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        strata.swap(i, rng.below(i + 1));
    }
    let mut samples: Vec<NoiseSample> = Vec::with_capacity(n);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, &k) in strata.iter().enumerate() {
        let (xi, yi) = (x.select(i), y.select(i));
        let c = (m * (k as f64 + rng.uniform(0.0, 1.0)) / n as f64).min(m);
        let ns = noise::draw_with_scale(rng, xi.shape(), yi.shape(), m, c)?;
        let (xp, yp) = noise::perturb(&xi, &yi, &ns)?;
        xs.push(xp);
        ys.push(if preset == NoisePreset::Matched { yp } else { yi });
        samples.push(ns);
    }
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?, NoiseBatch::from_samples(&samples)?))
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.tsv")
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{step:07}.ncsr"))
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join("final.ncsr")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub checkpoint: Checkpoint,
    pub skipped_steps: usize,
}

const STREAM_BATCH: u64 = 1;
const STREAM_DEQUANT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Train `model` in place. Each random role (batches, dequantization, noise)
/// owns a stream derived from `tc.seed`.
pub fn train(model: &mut Ncsr, corpus: &TrainCorpus, tc: &TrainConfig, out: Option<&RunOutput>) -> Result<TrainOutcome> {
    let cfg = model.config().clone();
    tc.validate(cfg.size_multiple())?;
    if corpus.patch != tc.patch_hr {
        return Err(NcsrError::Config(format!(
            "corpus prepared for {} px patches, config asks for {}",
            corpus.patch, tc.patch_hr
        )));
    }
    let mut rng_batch = Rng::derive(tc.seed, STREAM_BATCH);
    let mut rng_deq = Rng::derive(tc.seed, STREAM_DEQUANT);
    let mut rng_noise = Rng::derive(tc.seed, STREAM_NOISE);
    let mut sampler = EpochSampler::new(corpus.len());
    let mut adam = Adam::new(&model.params, tc.beta1, tc.beta2, tc.epsilon, tc.grad_clip_norm);
    let mut log_file = match out {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            let mut f = fs::File::create(o.log_path())?;
            writeln!(f, "{}", TrainRecord::HEADER)?;
            Some(f)
        }
        None => None,
    };
    let start = Instant::now();
    let mut records = Vec::with_capacity(tc.total_steps);
    let mut consecutive_bad = 0;
    let mut skipped_steps = 0;
    for step in 1..=tc.total_steps {
        let lr = tc.lr_at(step);
        let (x, y) = make_batch(corpus, &mut sampler, tc.batch_size, cfg.scale_factor, &mut rng_batch)?;
        let x = noise::dequantize(&x, &mut rng_deq);
        let (xp, yp, nb) = perturb_batch(&x, &y, tc.noise_preset, cfg.noise_m, &mut rng_noise)?;
        if !model.actnorm_initialized() {
            model.initialize_actnorm(&xp, &yp, &nb)?;
        }
        let result = model.loss_and_grads(&xp, &yp, &nb).and_then(|(loss, grads)| {
            if loss.is_finite() {
                Ok((loss, grads))
            } else {
                Err(NcsrError::NonFinite { layer: "loss".into() })
            }
        });
        let (loss, grads) = match result {
            Ok(v) => v,
            Err(NcsrError::NonFinite { layer }) => {
                consecutive_bad += 1;
                skipped_steps += 1;
                log::warn!("step {step}: non-finite value at layer `{layer}`");
                if consecutive_bad >= 2 {
                    return Err(NcsrError::TrainingAborted {
                        step,
                        reason: format!("non-finite loss on two consecutive steps; first non-finite layer `{layer}`"),
                    });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        consecutive_bad = 0;
        let outcome = adam.step(&mut model.params, &grads, lr)?;
        if outcome.skipped {
            skipped_steps += 1;
        }
        let rec = TrainRecord {
            step,
            bits_per_dim: loss,
            lr,
            grad_norm: outcome.grad_norm,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", rec.to_line())?;
        }
        if tc.log_every > 0 && step % tc.log_every == 0 {
            log::info!("step {step} bits/dim {loss:.4} lr {lr:e} |g| {:.3}", outcome.grad_norm);
        }
        records.push(rec);
        if let Some(o) = out {
            if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != tc.total_steps {
                Checkpoint::from_model(model, step as u64, Some(&rng_batch)).save(&o.checkpoint_path(step))?;
            }
        }
    }
    let checkpoint = Checkpoint::from_model(model, tc.total_steps as u64, Some(&rng_batch));
    if let Some(o) = out {
        checkpoint.save(&o.final_path())?;
    }
    Ok(TrainOutcome {
        records,
        checkpoint,
        skipped_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_exactly_at_milestones() {
        let tc = TrainConfig::default();
        assert_eq!(tc.lr_at(1), 2e-4);
        assert_eq!(tc.lr_at(1099), 2e-4);
        assert_eq!(tc.lr_at(1100), 1e-4);
        assert_eq!(tc.lr_at(1649), 1e-4);
        assert_eq!(tc.lr_at(1650), 5e-5);
        assert_eq!(tc.lr_at(2000), 5e-5);
    }

    #[test]
    fn config_validation() {
        let tc = TrainConfig::default();
        tc.validate(32).unwrap();
        assert!(tc.validate(48).is_err());
        let bad = TrainConfig {
            halve_at: vec![5, 5],
            ..tc.clone()
        };
        assert!(bad.validate(32).is_err());
        let mut t2 = TrainConfig::default();
        for (k, v) in tc.entries() {
            t2.set(&k, &v).unwrap();
        }
        assert_eq!(t2, tc);
        assert!(t2.set("bogus", "1").is_err());
    }

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::full([1, 1, 1, 1], v));
        s
    }

    #[test]
    fn first_adam_update_is_lr() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(&s, 0.9, 0.99, 1e-8, 0.0);
        let g = vec![Tensor::full([1, 1, 1, 1], 1.0)];
        adam.step(&mut s, &g, 0.1).unwrap();
        let moved = 1.0 - s.get(s.ids().next().unwrap()).data()[0];
        // m_hat = 1, v_hat = 1
        assert!((moved - 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_nan_is_skipped() {
        let mut s = scalar_store(0.25);
        let mut adam = Adam::new(&s, 0.9, 0.99, 1e-8, 10.0);
        adam.step(&mut s, &[Tensor::zeros([1, 1, 1, 1])], 0.1).unwrap();
        assert_eq!(s.get(s.ids().next().unwrap()).data()[0], 0.25);
        let out = adam.step(&mut s, &[Tensor::full([1, 1, 1, 1], f64::NAN)], 0.1).unwrap();
        assert!(out.skipped);
        assert_eq!(s.get(s.ids().next().unwrap()).data()[0], 0.25);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut a = scalar_store(0.0);
        let mut b = scalar_store(0.0);
        let mut clipped = Adam::new(&a, 0.9, 0.99, 1e-8, 1.0);
        let mut free = Adam::new(&b, 0.9, 0.99, 1e-8, 0.0);
        for g in [100.0, 0.5, 100.0] {
            let t = vec![Tensor::full([1, 1, 1, 1], g)];
            let o = clipped.step(&mut a, &t, 0.1).unwrap();
            assert_eq!(o.grad_norm, g);
            free.step(&mut b, &t, 0.1).unwrap();
        }
        let pa = a.get(a.ids().next().unwrap()).data()[0];
        let pb = b.get(b.ids().next().unwrap()).data()[0];
        assert_ne!(pa, pb);
    }

    #[test]
    fn augmentation_keeps_constants() {
        let img = Tensor::full([1, 3, 20, 20], 0.4);
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(augment(&img, 8, &mut rng), Tensor::full([1, 3, 8, 8], 0.4));
        }
    }

    #[test]
    fn batch_shapes_and_skipping() {
        let imgs = vec![
            Rng::seed_from_u64(1).uniform_tensor([1, 3, 40, 36], 0.0, 1.0),
            Tensor::zeros([1, 3, 8, 8]),
        ];
        let corpus = TrainCorpus::new(imgs, 32).unwrap();
        assert_eq!(corpus.len(), 1);
        let (x, y) = make_batch(&corpus, &mut EpochSampler::new(corpus.len()), 3, 4, &mut Rng::seed_from_u64(2)).unwrap();
        assert_eq!(x.shape(), [3, 3, 32, 32]);
        assert_eq!(y.shape(), [3, 3, 8, 8]);
        assert!(TrainCorpus::new(vec![Tensor::zeros([1, 3, 8, 8])], 32).is_err());
    }

    #[test]
    fn presets_route_noise() {
        let mut rng = Rng::seed_from_u64(3);
        let x = rng.uniform_tensor([2, 3, 8, 8], 0.0, 1.0);
        let y = downscale(&x, 2).unwrap();
        let (xn, yn, nb) = perturb_batch(&x, &y, NoisePreset::None, 0.1, &mut rng).unwrap();
        assert_eq!((xn, yn), (x.clone(), y.clone()));
        assert!(nb.v.data().iter().all(|&v| v == 0.0));
        let (xh, yh, nb) = perturb_batch(&x, &y, NoisePreset::HrOnly, 0.1, &mut rng).unwrap();
        assert_eq!(yh, y);
        assert_eq!(xh, x.add(&nb.v).unwrap());
        let (xm, ym, nb) = perturb_batch(&x, &y, NoisePreset::Matched, 0.1, &mut rng).unwrap();
        assert_eq!(xm, x.add(&nb.v).unwrap());
        let w = noise::resize_noise(&nb.v, y.shape()).unwrap();
        assert_eq!(ym, y.add(&w).unwrap());
        assert!(nb.c.iter().all(|&c| (0.0..=0.1).contains(&c)));
    }

    #[test]
    fn epochs_visit_each_image_once() {
        let mut rng = Rng::seed_from_u64(0);
        let mut s = EpochSampler::new(5);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|_| s.next(&mut rng)).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn noise_scales_are_stratified() {
        let mut rng = Rng::seed_from_u64(1);
        let x = Tensor::zeros([4, 3, 8, 8]);
        let y = Tensor::zeros([4, 3, 2, 2]);
        for _ in 0..20 {
            let (_, _, nb) = perturb_batch(&x, &y, NoisePreset::Matched, 0.1, &mut rng).unwrap();
            let mut slots: Vec<usize> = nb.c.iter().map(|c| (c / 0.025).floor() as usize).collect();
            slots.sort();
            assert_eq!(slots, vec![0, 1, 2, 3]);
        }
    }
}
