//! Run configuration: one flat `key = value` file. Keys carry a section
//! prefix (`model.`, `train.`, `eval.`, `data.`, `synth.`, `run.`) except
//! the top-level `seed`.

use std::path::PathBuf;

use ncsr::data::{Pattern, SyntheticCorpusSpec};
use ncsr::evaluator::PixelScore;
use ncsr::kv;
use ncsr::model::ModelConfig;
use ncsr::trainer::TrainConfig;
use ncsr::{NcsrError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub n_samples: usize,
    pub temperature: f64,
    pub score: PixelScore,
    /// Held-out images scored after training; empty skips evaluation.
    pub manifest: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_samples: 10,
            temperature: 0.9,
            score: PixelScore::SquaredError,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Seeds model initialization and every training stream.
    pub seed: u64,
    pub run_dir: PathBuf,
    /// Training images. Required unless `data.synthetic = true`.
    pub manifest: Option<PathBuf>,
    pub synthetic: bool,
    pub synth: SyntheticCorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            manifest: None,
            synthetic: false,
            synth: SyntheticCorpusSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("run.dir".to_string(), self.run_dir.display().to_string()),
            ("data.manifest".to_string(), path_text(&self.manifest)),
            ("data.synthetic".to_string(), self.synthetic.to_string()),
            ("synth.n_images".to_string(), self.synth.n_images.to_string()),
            ("synth.size".to_string(), self.synth.size.to_string()),
            ("synth.seed".to_string(), self.synth.seed.to_string()),
            (
                "synth.patterns".to_string(),
                self.synth.patterns.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
            ),
        ];
        out.extend(self.model.entries().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        out.extend(
            self.train
                .entries()
                .into_iter()
                .filter(|(k, _)| k != "seed")
                .map(|(k, v)| (format!("train.{k}"), v)),
        );
        out.extend([
            ("eval.n_samples".to_string(), self.eval.n_samples.to_string()),
            ("eval.temperature".to_string(), kv::render_f64(self.eval.temperature)),
            ("eval.score".to_string(), self.eval.score.to_string()),
            ("eval.manifest".to_string(), path_text(&self.eval.manifest)),
        ]);
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = kv::parse_u64(key, value)?;
                self.train.seed = self.seed;
            }
            "run.dir" => {
                if value.is_empty() {
                    return Err(NcsrError::Config("`run.dir` must not be empty".into()));
                }
                self.run_dir = PathBuf::from(value);
            }
            "data.manifest" => self.manifest = opt_path(value),
            "data.synthetic" => self.synthetic = kv::parse_bool(key, value)?,
            "synth.n_images" => self.synth.n_images = kv::parse_usize(key, value)?,
            "synth.size" => self.synth.size = kv::parse_usize(key, value)?,
            "synth.seed" => self.synth.seed = kv::parse_u64(key, value)?,
            "synth.patterns" => {
                self.synth.patterns = value
                    .split(',')
                    .map(|s| s.trim().parse::<Pattern>())
                    .collect::<Result<_>>()?
            }
            "eval.n_samples" => self.eval.n_samples = kv::parse_usize(key, value)?,
            "eval.temperature" => self.eval.temperature = kv::parse_f64(key, value)?,
            "eval.score" => self.eval.score = value.parse()?,
            "eval.manifest" => self.eval.manifest = opt_path(value),
            "train.seed" => return Err(NcsrError::Config("unknown key `train.seed` (use the top-level `seed`)".into())),
            _ => {
                if let Some(k) = key.strip_prefix("model.") {
                    self.model.set(k, value)?
                } else if let Some(k) = key.strip_prefix("train.") {
                    self.train.set(k, value)?
                } else {
                    return Err(NcsrError::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Parse config text; errors carry the line number.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for e in kv::parse(text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| NcsrError::Config(format!("line {}: {}", e.line, strip_prefix(&err))))?;
        }
        Ok(cfg)
    }

    /// Canonical text with every key, which parses back to `self`.
    pub fn to_text(&self) -> String {
        kv::render(&self.entries())
    }

    /// Checks that need more than one key.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.size_multiple())?;
        if self.manifest.is_none() && !self.synthetic {
            return Err(NcsrError::Config(
                "`data.manifest` is not set (give a manifest path or set `data.synthetic = true`)".into(),
            ));
        }
        if self.synth.patterns.is_empty() || self.synth.size == 0 || self.synth.n_images == 0 {
            return Err(NcsrError::Config("`synth.*` needs n_images, size and patterns".into()));
        }
        if !(self.eval.temperature >= 0.0) {
            return Err(NcsrError::Config("`eval.temperature` must be >= 0".into()));
        }
        Ok(())
    }
}

fn strip_prefix(e: &NcsrError) -> String {
    match e {
        NcsrError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.train.seed = 7;
        cfg.manifest = Some(PathBuf::from("data/manifest.tsv"));
        cfg.model.levels = 2;
        cfg.model.ncl_blocks = vec![1];
        cfg.synth.patterns = vec![Pattern::Stripes, Pattern::Blobs];
        cfg.eval.temperature = 0.75;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let err = RunConfig::from_text("seed = 1\nmodel.levls = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("levls"), "{err}");
        let err = RunConfig::from_text("colour = red\n").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        assert!(RunConfig::from_text("train.seed = 3\n").is_err());
    }

    #[test]
    fn missing_corpus_names_the_field() {
        let err = RunConfig::default().validate().unwrap_err().to_string();
        assert!(err.contains("data.manifest"), "{err}");
    }

    #[test]
    fn seed_reaches_the_trainer() {
        let cfg = RunConfig::from_text("seed = 12\n").unwrap();
        assert_eq!(cfg.train.seed, 12);
    }
}
