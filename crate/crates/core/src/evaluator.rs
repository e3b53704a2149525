//! Metrics over sets of super-resolved samples: diversity, LR consistency
//! (LR-PSNR mean and worst), PSNR, and a perceptual-distance proxy.

use rayon::prelude::*;

use crate::data::make_pair;
use crate::error::{NcsrError, Result};
use crate::model::Ncsr;
use crate::numerics::{downscale, Rng, Tensor};

pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

/// Per-pixel score used by the diversity metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PixelScore {
    #[default]
    SquaredError,
    AbsoluteError,
}

impl std::fmt::Display for PixelScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PixelScore::SquaredError => "squared",
            PixelScore::AbsoluteError => "absolute",
        })
    }
}

impl std::str::FromStr for PixelScore {
    type Err = NcsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(PixelScore::SquaredError),
            "absolute" => Ok(PixelScore::AbsoluteError),
            _ => Err(NcsrError::Config(format!("unknown pixel score `{s}` (squared or absolute)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diversity {
    /// Percent; `0` when `degenerate`.
    pub value: f64,
    pub local_best: f64,
    pub global_best: f64,
    /// Some sample matches the ground truth exactly (`global_best == 0`).
    pub degenerate: bool,
}

/// Per-pixel scores of one sample, averaged over channels: `H * W` values.
fn pixel_scores(sample: &Tensor, gt: &Tensor, score: PixelScore) -> Vec<f64> {
    let [_, c, h, w] = gt.shape();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let d = sample.at(0, ch, y, x) - gt.at(0, ch, y, x);
                out[y * w + x] += match score {
                    PixelScore::SquaredError => d * d,
                    PixelScore::AbsoluteError => d.abs(),
                } / c as f64;
            }
        }
    }
    out
}

fn check_samples(samples: &[Tensor], shape: [usize; 4]) -> Result<()> {
    if samples.is_empty() {
        return Err(NcsrError::InvalidArgument("empty sample set".into()));
    }
    if shape[0] != 1 {
        return Err(NcsrError::InvalidArgument(format!("expected single images, got batch {}", shape[0])));
    }
    for s in samples {
        if s.shape() != shape {
            return Err(NcsrError::shape("sample set", &s.shape(), &shape));
        }
    }
    Ok(())
}

/// `100 * (global_best - local_best) / global_best`, where local best is the
/// image mean of the per-pixel minimum score over samples and global best is
/// the minimum over samples of the image-mean score.
pub fn diversity_score(samples: &[Tensor], gt: &Tensor, score: PixelScore) -> Result<Diversity> {
    check_samples(samples, gt.shape())?;
    if samples.len() < 2 {
        return Err(NcsrError::InvalidArgument(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    let scores: Vec<Vec<f64>> = samples.iter().map(|s| pixel_scores(s, gt, score)).collect();
    let npix = scores[0].len() as f64;
    let global_best = scores.iter().map(|s| s.iter().sum::<f64>() / npix).fold(f64::INFINITY, f64::min);
    let local_best = (0..scores[0].len())
        .map(|p| scores.iter().map(|s| s[p]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / npix;
    assert!(
        local_best <= global_best * (1.0 + 1e-12) + 1e-300,
        "local best {local_best} exceeds global best {global_best}"
    );
    if global_best == 0.0 {
        return Ok(Diversity {
            value: 0.0,
            local_best,
            global_best,
            degenerate: true,
        });
    }
    Ok(Diversity {
        value: ((global_best - local_best) / global_best * 100.0).max(0.0),
        local_best,
        global_best,
        degenerate: false,
    })
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(NcsrError::shape("mse", &a.shape(), &b.shape()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64)
}

/// Peak 1.0, capped at 99 dB.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrPsnr {
    pub mean: f64,
    pub worst: f64,
    pub per_sample: Vec<f64>,
}

/// PSNR between each bicubic-downsampled sample and the LR input.
pub fn lr_psnr(samples: &[Tensor], lr: &Tensor, scale: usize) -> Result<LrPsnr> {
    if samples.is_empty() {
        return Err(NcsrError::InvalidArgument("empty sample set".into()));
    }
    let per_sample = samples
        .iter()
        .map(|s| {
            let d = downscale(s, scale)?;
            if d.shape() != lr.shape() {
                return Err(NcsrError::shape("lr_psnr", &d.shape(), &lr.shape()));
            }
            psnr(&d, lr)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let worst = per_sample.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LrPsnr {
        mean: mean.max(worst),
        worst,
        per_sample,
    })
}

fn gradient_magnitude(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    Tensor::from_fn([n, c, h, w], |ni, ci, y, x| {
        let gx = if x + 1 < w { t.at(ni, ci, y, x + 1) - t.at(ni, ci, y, x) } else { 0.0 };
        let gy = if y + 1 < h { t.at(ni, ci, y + 1, x) - t.at(ni, ci, y, x) } else { 0.0 };
        (gx * gx + gy * gy).sqrt()
    })
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64
}

/// Stand-in for a learned perceptual distance (it is not LPIPS): at three
/// dyadic scales, mean absolute intensity difference plus mean absolute
/// difference of gradient magnitudes, averaged over scales.
pub fn perceptual_proxy(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(NcsrError::shape("perceptual_proxy", &a.shape(), &b.shape()));
    }
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut total = 0.0;
    let mut levels = 0;
    for level in 0..3 {
        if level > 0 {
            if a.height() < 2 || a.width() < 2 || a.height() % 2 != 0 || a.width() % 2 != 0 {
                break;
            }
            a = a.avg_pool(2)?;
            b = b.avg_pool(2)?;
        }
        total += mean_abs_diff(&a, &b) + mean_abs_diff(&gradient_magnitude(&a), &gradient_magnitude(&b));
        levels += 1;
    }
    Ok(total / levels as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Tensor>,
    pub ground_truth: Tensor,
    pub lr_input: Tensor,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    /// `None` when fewer than two samples were drawn.
    pub diversity: Option<f64>,
    pub lr_psnr_mean: f64,
    pub lr_psnr_worst: f64,
    pub psnr_best: f64,
    pub perceptual_proxy: f64,
}

pub fn score_set(id: &str, set: &SampleSet, score: PixelScore) -> Result<ImageMetrics> {
    check_samples(&set.samples, set.ground_truth.shape())?;
    let diversity = if set.samples.len() >= 2 {
        Some(diversity_score(&set.samples, &set.ground_truth, score)?.value)
    } else {
        None
    };
    let lr = lr_psnr(&set.samples, &set.lr_input, set.scale)?;
    let mut psnr_best = f64::NEG_INFINITY;
    let mut proxy = 0.0;
    for s in &set.samples {
        psnr_best = psnr_best.max(psnr(s, &set.ground_truth)?);
        proxy += perceptual_proxy(s, &set.ground_truth)?;
    }
    Ok(ImageMetrics {
        id: id.to_string(),
        diversity,
        lr_psnr_mean: lr.mean,
        lr_psnr_worst: lr.worst,
        psnr_best,
        perceptual_proxy: proxy / set.samples.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub diversity: Option<f64>,
    pub lr_psnr_mean: f64,
    pub lr_psnr_worst: f64,
    pub psnr_best: f64,
    pub perceptual_proxy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    pub failures: Vec<(String, String)>,
    pub n_samples: usize,
    pub temperature: f64,
    pub seed: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |d| format!("{d:.6}"))
}

impl MetricsReport {
    pub const COLUMNS: &'static str = "image\tdiversity\tlr_psnr_mean\tlr_psnr_worst\tpsnr_best\tperceptual_proxy";

    /// Means over the successfully scored images; `None` if there are none.
    pub fn aggregate(&self) -> Option<Aggregate> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        let divs: Vec<f64> = self.rows.iter().filter_map(|r| r.diversity).collect();
        Some(Aggregate {
            diversity: (divs.len() == self.rows.len()).then(|| divs.iter().sum::<f64>() / n),
            lr_psnr_mean: mean(|r| r.lr_psnr_mean),
            lr_psnr_worst: mean(|r| r.lr_psnr_worst),
            psnr_best: mean(|r| r.psnr_best),
            perceptual_proxy: mean(|r| r.perceptual_proxy),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::COLUMNS);
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.id,
                fmt_opt(r.diversity),
                r.lr_psnr_mean,
                r.lr_psnr_worst,
                r.psnr_best,
                r.perceptual_proxy
            ));
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "n_samples = {}\ntemperature = {:?}\nseed = {}\nimages_scored = {}\nimages_failed = {}\n",
            self.n_samples,
            self.temperature,
            self.seed,
            self.rows.len(),
            self.failures.len()
        );
        if let Some(a) = self.aggregate() {
            s.push_str(&format!(
                "mean.diversity = {}\nmean.lr_psnr_mean = {:.6}\nmean.lr_psnr_worst = {:.6}\nmean.psnr_best = {:.6}\nmean.perceptual_proxy = {:.6}\n",
                fmt_opt(a.diversity),
                a.lr_psnr_mean,
                a.lr_psnr_worst,
                a.psnr_best,
                a.perceptual_proxy
            ));
        }
        for (id, why) in &self.failures {
            s.push_str(&format!("failure.{id} = {}\n", why.replace('\n', " ")));
        }
        s
    }

    pub fn summary_line(&self) -> String {
        match self.aggregate() {
            Some(a) => format!(
                "diversity={}  lr_psnr={:.3}  lr_psnr_worst={:.3}  proxy={:.4}",
                a.diversity.map_or_else(|| "undefined".to_string(), |d| format!("{d:.3}")),
                a.lr_psnr_mean,
                a.lr_psnr_worst,
                a.perceptual_proxy
            ),
            None => "diversity=undefined  lr_psnr=undefined  lr_psnr_worst=undefined  proxy=undefined".into(),
        }
    }
}

/// Worker count from `NCSR_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("NCSR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub score: PixelScore,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: 10,
            temperature: 0.9,
            seed: 0,
            score: PixelScore::SquaredError,
            threads: 1,
        }
    }
}

/// Draw the sample set for one HR image: center-crop, bicubic LR, then
/// `n` samples at the given temperature from the image's own stream.
pub fn sample_set(model: &Ncsr, hr: &Tensor, n: usize, temperature: f64, rng: &mut Rng) -> Result<SampleSet> {
    let scale = model.config().scale_factor;
    let (gt, lr) = make_pair(hr, scale, model.config().size_multiple())?;
    let samples = model.sample(&lr, temperature, rng, n)?;
    Ok(SampleSet {
        samples,
        ground_truth: gt,
        lr_input: lr,
        scale,
    })
}

/// Score every image. Image `i` draws from `Rng::derive(seed, i)`, so the
/// report does not depend on the number of workers. Per-image failures are
/// recorded and the rest continue.
pub fn evaluate(model: &Ncsr, images: &[(String, Tensor)], ec: &EvalConfig) -> Result<MetricsReport> {
    if ec.n_samples == 0 {
        return Err(NcsrError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let run = |i: usize, id: &str, hr: &Tensor| -> Result<ImageMetrics> {
        let mut rng = Rng::derive(ec.seed, i as u64);
        let set = sample_set(model, hr, ec.n_samples, ec.temperature, &mut rng)?;
        score_set(id, &set, ec.score)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ec.threads.max(1))
        .build()
        .map_err(|e| NcsrError::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<ImageMetrics>> = pool.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, (id, hr))| run(i, id, hr))
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((id, _), r) in images.iter().zip(results) {
        match r {
            Ok(m) => rows.push(m),
            Err(e) => {
                log::warn!("evaluation of `{id}` failed: {e}");
                failures.push((id.clone(), e.to_string()));
            }
        }
    }
    Ok(MetricsReport {
        rows,
        failures,
        n_samples: ec.n_samples,
        temperature: ec.temperature,
        seed: ec.seed,
    })
}
