//! Self-check suite behind `ncsr verify`: round trips, brute-force
//! Jacobians, finite-difference gradients and metric oracles, each reported
//! with its measured error and tolerance.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use crate::error::{NcsrError, Result};
use crate::evaluator::{diversity_score, lr_psnr, PixelScore};
use crate::flow::{
    ActNorm, AffineInjector, CondAffineCoupling, CondMode, ConditioningBundle, FlowState, InvConv1x1, Layer,
};
use crate::model::{ConditioningVariant, LatentSpec, ModelConfig, Ncsr, ParamClass};
use crate::noise::NoiseBatch;
use crate::numerics::{downscale, Rng, SquareMatrix, Tape, Tensor};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = NcsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(NcsrError::Config(format!("unknown verify level `{other}` (quick or full)"))),
        }
    }
}

/// Deliberate corruption, to confirm the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Make every 1x1 convolution weight singular.
    Singular1x1,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub level: Level,
    pub seed: u64,
    pub fault: Fault,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst error seen (infinite when a check could not run).
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} measured={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  ({})", self.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, tolerance: f64, detail: String, run: impl FnOnce() -> Result<f64>) -> CheckResult {
    match run() {
        Ok(measured) => CheckResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured < tolerance,
            detail,
        },
        Err(e) => CheckResult {
            name: name.into(),
            measured: f64::INFINITY,
            tolerance,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Central-difference Jacobian (`h = 1e-5`) of a dimension-preserving map.
pub fn numeric_jacobian(x: &Tensor, f: impl Fn(&Tensor) -> Result<Vec<f64>>) -> Result<SquareMatrix> {
    let d = x.numel();
    let h = 1e-5;
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let mut xm = x.clone();
        xm.data_mut()[j] -= h;
        let (fp, fm) = (f(&xp)?, f(&xm)?);
        if fp.len() != d {
            return Err(NcsrError::shape("jacobian", &[fp.len()], &[d]));
        }
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    SquareMatrix::new(d, jac)
}

fn corrupt(model: &mut Ncsr, fault: Fault) {
    if fault != Fault::Singular1x1 {
        return;
    }
    let ids: Vec<_> = model.params.ids().filter(|&id| ParamClass::of(model.params.name(id)) == ParamClass::InvConv).collect();
    for id in ids {
        make_singular(model.params.get_mut(id));
    }
}

/// Copy row 0 onto row 1 of a `(C, C, 1, 1)` weight.
fn make_singular(w: &mut Tensor) {
    let c = w.batch();
    if c < 2 {
        w.data_mut()[0] = 0.0;
        return;
    }
    let d = w.data_mut();
    for j in 0..c {
        d[c + j] = d[j];
    }
}

fn random_config(rng: &mut Rng) -> ModelConfig {
    let scale = [2, 4][rng.below(2)];
    let levels = 1 + rng.below(if scale == 4 { 2 } else { 3 });
    let variant = [ConditioningVariant::Noise, ConditioningVariant::Std, ConditioningVariant::None][rng.below(3)];
    let ncl_blocks = (1..levels).filter(|_| rng.below(2) == 1).collect();
    ModelConfig {
        scale_factor: scale,
        levels,
        flow_steps_per_level: 1 + rng.below(2),
        ncl_blocks,
        conditioning_variant: variant,
        encoder_blocks: rng.below(2),
        encoder_width: 4,
        coupling_hidden: 4,
        conditional_prior: rng.below(2) == 1,
        ..ModelConfig::default()
    }
}

fn random_inputs(model: &Ncsr, n: usize, side: usize, rng: &mut Rng) -> Result<(Tensor, Tensor, NoiseBatch)> {
    let x = rng.uniform_tensor([n, 3, side, side], 0.0, 1.0);
    let y = downscale(&x, model.config().scale_factor)?;
    let c = rng.uniform(0.0, 0.1);
    let noise = NoiseBatch {
        v: rng.gaussian(x.shape(), c)?,
        c: vec![c; n],
    };
    Ok((x, y, noise))
}

fn invertibility(opts: &VerifyOptions, cases: usize) -> CheckResult {
    let mut rng = Rng::derive(opts.seed, 10);
    check("model_round_trip", 1e-8, format!("{cases} random configs"), || {
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let cfg = random_config(&mut rng);
            let mut m = Ncsr::build(cfg, &mut rng)?;
            m.jitter(&mut rng, 0.05);
            corrupt(&mut m, opts.fault);
            let side = m.config().size_multiple();
            let (x, y, noise) = random_inputs(&m, 2, side, &mut rng)?;
            let rep = m.nll(&x, &y, &noise)?;
            let back = m.decode(&y, &noise, LatentSpec::Exact(&rep.latents))?;
            worst = worst.max(back.x.max_abs_diff(&x)?);
        }
        Ok(worst)
    })
}

fn layer_logdet(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let kinds = ["actnorm", "inv_conv1x1", "affine_injector", "lr_coupling", "noise_coupling"];
    for (k, kind) in kinds.iter().enumerate() {
        let mut rng = Rng::derive(opts.seed, 20 + k as u64);
        out.push(check(&format!("logdet.{kind}"), 1e-7, "16-dim input, full Jacobian".into(), || {
            let (c, extra) = (4, 4);
            let mut store = ParamStore::new();
            let layer = match *kind {
                "actnorm" => Layer::ActNorm(ActNorm::new(&mut store, "l", c)),
                "inv_conv1x1" => Layer::InvConv(InvConv1x1::new(&mut store, "l", c, &mut rng)),
                "affine_injector" => Layer::Injector(AffineInjector::new(&mut store, "l", c, 3, 4, 2.0)),
                "lr_coupling" => Layer::Coupling(CondAffineCoupling::new(&mut store, "l", c, 3, 0, 4, 2.0)?),
                _ => Layer::Coupling(CondAffineCoupling::new(&mut store, "l", c, 3, extra, 4, 2.0)?),
            };
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                let t = store.get_mut(id);
                for v in t.data_mut() {
                    *v += 0.3 * rng.standard_normal();
                }
                if opts.fault == Fault::Singular1x1 && *kind == "inv_conv1x1" {
                    make_singular(t);
                }
            }
            let u = rng.gaussian([1, 3, 2, 2], 1.0)?;
            let v = rng.gaussian([1, extra, 2, 2], 0.1)?;
            let noisy = *kind == "noise_coupling";
            let run = |x: &Tensor| -> Result<(Vec<f64>, f64)> {
                let mut tape = Tape::new();
                let mut p = store.bind(&mut tape, false);
                let h = tape.constant(x.clone());
                let uv = tape.constant(u.clone());
                let cond = if noisy {
                    ConditioningBundle {
                        u: uv,
                        extra: Some(tape.constant(v.clone())),
                        mode: CondMode::LrAndNoise,
                    }
                } else {
                    ConditioningBundle::lr_only(uv)
                };
                let st = FlowState::new(&mut tape, h);
                let o = layer.forward(&mut tape, &mut p, st, &cond)?;
                Ok((tape.value(o.h).data().to_vec(), tape.value(o.logdet).data()[0]))
            };
            let x = rng.gaussian([1, c, 2, 2], 1.0)?;
            let (_, ld) = run(&x)?;
            let jac = numeric_jacobian(&x, |xx| Ok(run(xx)?.0))?;
            Ok((ld - jac.logabsdet()?).abs())
        }));
    }
    out
}

fn nll_exactness(opts: &VerifyOptions, inputs: usize) -> CheckResult {
    let mut rng = Rng::derive(opts.seed, 30);
    check("nll_brute_force_48d", 1e-6, format!("{inputs} inputs, 4x4 RGB, one level"), || {
        let cfg = ModelConfig {
            scale_factor: 2,
            levels: 1,
            flow_steps_per_level: 2,
            ncl_blocks: vec![],
            encoder_blocks: 1,
            encoder_width: 4,
            coupling_hidden: 4,
            ..ModelConfig::default()
        };
        let mut m = Ncsr::build(cfg, &mut rng)?;
        m.jitter(&mut rng, 0.05);
        corrupt(&mut m, opts.fault);
        let mut worst: f64 = 0.0;
        for _ in 0..inputs {
            let (x, y, noise) = random_inputs(&m, 1, 4, &mut rng)?;
            let rep = m.nll(&x, &y, &noise)?;
            let z = rep.latents[0].data().to_vec();
            let jac = numeric_jacobian(&x, |xx| Ok(m.nll(xx, &y, &noise)?.latents[0].data().to_vec()))?;
            let logp: f64 = z.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
            worst = worst.max((rep.nats[0] + logp + jac.logabsdet()?).abs());
        }
        Ok(worst)
    })
}

/// Relative error with the denominator floored at `1e-4`, so that
/// gradients near zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn gradients(opts: &VerifyOptions, probes: usize) -> Vec<CheckResult> {
    let mut rng = Rng::derive(opts.seed, 40);
    let cfg = ModelConfig {
        scale_factor: 2,
        levels: 2,
        flow_steps_per_level: 1,
        ncl_blocks: vec![1],
        encoder_blocks: 1,
        encoder_width: 4,
        coupling_hidden: 4,
        ..ModelConfig::default()
    };
    let mut setup = || -> Result<(Ncsr, Tensor, Tensor, NoiseBatch, Vec<Tensor>)> {
        let mut m = Ncsr::build(cfg.clone(), &mut rng)?;
        m.jitter(&mut rng, 0.05);
        corrupt(&mut m, opts.fault);
        let (x, y, noise) = random_inputs(&m, 2, 8, &mut rng)?;
        let (_, grads) = m.loss_and_grads(&x, &y, &noise)?;
        Ok((m, x, y, noise, grads))
    };
    let (m, x, y, noise, grads) = match setup() {
        Ok(v) => v,
        Err(e) => {
            return ParamClass::ALL
                .iter()
                .map(|c| check(&format!("gradient.{c:?}").to_lowercase(), 1e-4, String::new(), || Err(e.clone_message())))
                .collect()
        }
    };
    let mut by_class: BTreeMap<ParamClass, Vec<(usize, crate::params::ParamId)>> = BTreeMap::new();
    for (k, id) in m.params.ids().enumerate() {
        by_class.entry(ParamClass::of(m.params.name(id))).or_default().push((k, id));
    }
    let mut prng = Rng::derive(opts.seed, 41);
    ParamClass::ALL
        .iter()
        .map(|class| {
            let name = format!("gradient.{class:?}").to_lowercase();
            check(&name, 1e-4, format!("{probes} probes"), || {
                let members = by_class
                    .get(class)
                    .ok_or_else(|| NcsrError::InvalidArgument(format!("no {class:?} parameters")))?;
                let mut worst: f64 = 0.0;
                for _ in 0..probes {
                    let (k, id) = members[prng.below(members.len())];
                    let idx = prng.below(m.params.get(id).numel());
                    let h = 1e-5;
                    let eval = |delta: f64| -> Result<f64> {
                        let mut mm = m.clone();
                        mm.params.get_mut(id).data_mut()[idx] += delta;
                        Ok(mm.loss_and_grads(&x, &y, &noise)?.0)
                    };
                    let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
                    worst = worst.max(relative_error(grads[k].data()[idx], fd));
                }
                Ok(worst)
            })
        })
        .collect()
}

fn naive_psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    let [_, c, h, w] = a.shape();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let d = a.at(0, ch, y, x) - b.at(0, ch, y, x);
                sum += d * d;
                n += 1;
            }
        }
    }
    let mse = sum / n as f64;
    if mse < 1e-10 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

fn metric_oracles(opts: &VerifyOptions, sets: usize) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(check("metric.diversity_two_pixel", 1e-9, "expect 80.0".into(), || {
        let gt = Tensor::zeros([1, 3, 1, 2]);
        let a = Tensor::from_fn([1, 3, 1, 2], |_, _, _, x| [0.1, 0.3][x]);
        let b = Tensor::from_fn([1, 3, 1, 2], |_, _, _, x| [0.3, 0.1][x]);
        Ok((diversity_score(&[a, b], &gt, PixelScore::SquaredError)?.value - 80.0).abs())
    }));
    let mut rng = Rng::derive(opts.seed, 50);
    out.push(check("metric.lr_psnr_naive", 1e-9, format!("{sets} random sets"), || {
        let mut worst: f64 = 0.0;
        for _ in 0..sets {
            let lr = rng.uniform_tensor([1, 3, 4, 4], 0.0, 1.0);
            let samples: Vec<Tensor> = (0..4).map(|_| rng.uniform_tensor([1, 3, 8, 8], 0.0, 1.0)).collect();
            let got = lr_psnr(&samples, &lr, 2)?;
            let naive: Vec<f64> = samples
                .iter()
                .map(|s| Ok(naive_psnr(&downscale(s, 2)?, &lr)))
                .collect::<Result<_>>()?;
            let mean = naive.iter().sum::<f64>() / naive.len() as f64;
            let min = naive.iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max((got.mean - mean).abs()).max((got.worst - min).abs());
        }
        Ok(worst)
    }));
    out
}

/// Run the suite. `Quick` covers every property with few cases; `Full`
/// adds the 48-dimension likelihood check and more cases.
pub fn run(opts: &VerifyOptions) -> Vec<CheckResult> {
    let start = Instant::now();
    let (cases, probes, sets) = match opts.level {
        Level::Quick => (5, 3, 10),
        Level::Full => (50, 20, 100),
    };
    let mut results = vec![invertibility(opts, cases)];
    results.extend(layer_logdet(opts));
    if opts.level == Level::Full {
        results.push(nll_exactness(opts, 10));
    }
    results.extend(gradients(opts, probes));
    results.extend(metric_oracles(opts, sets));
    log::info!("verify finished in {:.1}s", start.elapsed().as_secs_f64());
    results
}

impl NcsrError {
    fn clone_message(&self) -> NcsrError {
        NcsrError::InvalidArgument(self.to_string())
    }
}
