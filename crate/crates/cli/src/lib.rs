//! Command implementations behind the `ncsr` binary. Each returns a
//! [`CliError`] carrying the process exit code.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ncsr::checkpoint::{content_hash, Checkpoint};
use ncsr::data::{load_manifest, load_png, save_png, synth_corpus, write_corpus};
use ncsr::evaluator::{evaluate, worker_count, EvalConfig, MetricsReport};
use ncsr::model::Ncsr;
use ncsr::numerics::{Rng, Tensor};
use ncsr::trainer::{train, RunOutput, TrainCorpus};
use ncsr::verify::{self, CheckResult, Fault, Level, VerifyOptions};
use ncsr::NcsrError;

pub use config::RunConfig;

/// `git describe` output at build time, or the crate version.
pub const BUILD_ID: &str = env!("NCSR_BUILD_ID");

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

/// Config, input and format errors exit 2; aborted training exits 3.
impl From<NcsrError> for CliError {
    fn from(e: NcsrError) -> Self {
        let code = match &e {
            NcsrError::TrainingAborted { .. } => 3,
            NcsrError::Io(_) | NcsrError::NonFinite { .. } => 1,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::failure(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read_config(path: &Path) -> CliResult<(String, RunConfig)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let cfg = RunConfig::from_text(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((text, cfg))
}

/// Relative paths in a config resolve against the config file's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_corpus(cfg: &RunConfig, base: &Path) -> CliResult<Vec<Tensor>> {
    if let Some(m) = &cfg.manifest {
        let path = resolve(base, m);
        if !path.is_file() {
            return Err(CliError::usage(format!("`data.manifest`: no such file {}", path.display())));
        }
        let records = load_manifest(&path).map_err(|e| CliError::usage(format!("`data.manifest`: {e}")))?;
        Ok(records.into_iter().map(|r| r.hr).collect())
    } else {
        Ok(synth_corpus(&cfg.synth)?.into_iter().map(|r| r.hr).collect())
    }
}

pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checkpoint_hash: String,
    pub final_bits_per_dim: Option<f64>,
}

/// `ncsr train -c <cfg>`: writes the config echo, log, checkpoints and a
/// `run_info.txt` into `run.dir`.
pub fn cmd_train(config_path: &Path) -> CliResult<TrainSummary> {
    let (source, cfg) = read_config(config_path)?;
    cfg.validate().map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let images = load_corpus(&cfg, base)?;
    let corpus = TrainCorpus::new(images, cfg.train.patch_hr)?;
    let run_dir = resolve(base, &cfg.run_dir);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.txt"), &source)?;
    fs::write(run_dir.join("config.resolved.txt"), cfg.to_text())?;

    let mut model = Ncsr::build(cfg.model.clone(), &mut Rng::seed_from_u64(cfg.seed))?;
    let out = RunOutput { dir: run_dir.clone() };
    let outcome = train(&mut model, &corpus, &cfg.train, Some(&out))?;
    let final_path = out.final_path();
    let hash = content_hash(&fs::read(&final_path)?);
    let last = outcome.records.last().map(|r| r.bits_per_dim);

    let mut info = format!(
        "seed = {}\nbuild = {}\nsteps = {}\nskipped_steps = {}\nfinal_checkpoint = final.ncsr\ncheckpoint_sha256 = {hash}\n",
        cfg.seed,
        BUILD_ID,
        cfg.train.total_steps,
        outcome.skipped_steps
    );
    if let Some(m) = &cfg.eval.manifest {
        let images = manifest_images(&resolve(base, m))?;
        let ec = EvalConfig {
            n_samples: cfg.eval.n_samples,
            temperature: cfg.eval.temperature,
            seed: cfg.seed,
            score: cfg.eval.score,
            threads: worker_count(),
        };
        let report = evaluate(&model, &images, &ec)?;
        write_report(&run_dir.join("eval"), &report, &hash)?;
        info.push_str(&format!("eval = {}\n", report.summary_line()));
    }
    fs::write(run_dir.join("run_info.txt"), info)?;
    Ok(TrainSummary {
        run_dir,
        final_checkpoint: final_path,
        checkpoint_hash: hash,
        final_bits_per_dim: last,
    })
}

fn load_checkpoint(path: &Path) -> CliResult<(Ncsr, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("checkpoint {}: {e}", path.display())))?;
    let ck = Checkpoint::from_bytes(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((ck.to_model()?, content_hash(&bytes)))
}

pub struct SampleArgs<'a> {
    pub checkpoint: &'a Path,
    pub lr_image: &'a Path,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
    pub out_dir: &'a Path,
}

/// `ncsr sample`: `n` PNGs named `sample_000.png`, ... plus `sample_info.txt`.
pub fn cmd_sample(a: &SampleArgs<'_>) -> CliResult<Vec<PathBuf>> {
    if !(a.temperature >= 0.0) || !a.temperature.is_finite() {
        return Err(CliError::usage(format!("temperature must be finite and >= 0, got {}", a.temperature)));
    }
    let (model, hash) = load_checkpoint(a.checkpoint)?;
    let y = load_png(a.lr_image)?;
    let cfg = model.config();
    let (h, w) = (y.height() * cfg.scale_factor, y.width() * cfg.scale_factor);
    cfg.check_hr_size(h, w).map_err(|_| {
        CliError::usage(format!(
            "LR image {}x{} does not fit a x{} model with {} levels: LR sides must be multiples of {}",
            y.height(),
            y.width(),
            cfg.scale_factor,
            cfg.levels,
            1usize << cfg.levels
        ))
    })?;
    let mut rng = Rng::seed_from_u64(a.seed);
    let samples = model.sample(&y, a.temperature, &mut rng, a.n)?;
    fs::create_dir_all(a.out_dir)?;
    let mut paths = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let p = a.out_dir.join(format!("sample_{i:03}.png"));
        save_png(&p, s)?;
        paths.push(p);
    }
    let info = format!(
        "temperature = {:?}\nseed = {}\nn = {}\ncheckpoint_sha256 = {hash}\nlr_image = {}\nbuild = {BUILD_ID}\n",
        a.temperature,
        a.seed,
        a.n,
        a.lr_image.display()
    );
    fs::write(a.out_dir.join("sample_info.txt"), info)?;
    Ok(paths)
}

fn manifest_images(path: &Path) -> CliResult<Vec<(String, Tensor)>> {
    let records = load_manifest(path).map_err(|e| CliError::usage(format!("manifest: {e}")))?;
    Ok(records.into_iter().map(|r| (r.id, r.hr)).collect())
}

fn write_report(dir: &Path, report: &MetricsReport, hash: &str) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.tsv"), report.to_tsv())?;
    fs::write(
        dir.join("summary.txt"),
        format!("{}checkpoint_sha256 = {hash}\nsummary = {}\n", report.to_kv(), report.summary_line()),
    )?;
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub manifest: &'a Path,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

pub struct EvalSummary {
    pub report: MetricsReport,
    pub out_dir: PathBuf,
}

/// Directory `eval` writes to: next to the checkpoint, keyed by its
/// arguments.
pub fn eval_dir(a: &EvalArgs<'_>) -> PathBuf {
    let stem = a.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let parent = a.checkpoint.parent().unwrap_or(Path::new("."));
    parent.join(format!("eval_{stem}_n{}_t{:?}_s{}", a.n, a.temperature, a.seed))
}

/// `ncsr eval`: fails only when no image could be scored.
pub fn cmd_eval(a: &EvalArgs<'_>) -> CliResult<EvalSummary> {
    if !(a.temperature >= 0.0) || !a.temperature.is_finite() {
        return Err(CliError::usage(format!("temperature must be finite and >= 0, got {}", a.temperature)));
    }
    if a.n == 0 {
        return Err(CliError::usage("-n must be >= 1"));
    }
    let (model, hash) = load_checkpoint(a.checkpoint)?;
    let images = manifest_images(a.manifest)?;
    let ec = EvalConfig {
        n_samples: a.n,
        temperature: a.temperature,
        seed: a.seed,
        threads: worker_count(),
        ..EvalConfig::default()
    };
    let report = evaluate(&model, &images, &ec)?;
    let out_dir = eval_dir(a);
    write_report(&out_dir, &report, &hash)?;
    for (id, why) in &report.failures {
        eprintln!("image {id} failed: {why}");
    }
    if report.rows.is_empty() {
        return Err(CliError::failure(format!("all {} images failed", report.failures.len())));
    }
    Ok(EvalSummary { report, out_dir })
}

/// `ncsr verify`: every check result; the caller exits 1 if any failed.
pub fn cmd_verify(level: Level, seed: u64, fault: Fault) -> Vec<CheckResult> {
    verify::run(&VerifyOptions { level, seed, fault })
}

/// `ncsr synth-data -c <cfg> -o <dir>`: the corpus described by `synth.*`.
pub fn cmd_synth_data(config_path: &Path, out_dir: &Path) -> CliResult<PathBuf> {
    let (_, cfg) = read_config(config_path)?;
    let mut records = synth_corpus(&cfg.synth)?;
    Ok(write_corpus(out_dir, &mut records)?)
}
