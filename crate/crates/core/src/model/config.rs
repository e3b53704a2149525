use std::fmt;
use std::str::FromStr;

use crate::error::{NcsrError, Result};
use crate::flow::DEFAULT_SCALE_BOUND;
use crate::kv;

/// What the noise conditional layers read besides the LR encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditioningVariant {
    /// The squeezed noise vector itself.
    Noise,
    /// A constant map holding the noise standard deviation.
    Std,
    /// No noise conditional layers at all.
    None,
}

impl fmt::Display for ConditioningVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditioningVariant::Noise => "noise",
            ConditioningVariant::Std => "std",
            ConditioningVariant::None => "none",
        })
    }
}

impl FromStr for ConditioningVariant {
    type Err = NcsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(ConditioningVariant::Noise),
            "std" => Ok(ConditioningVariant::Std),
            "none" => Ok(ConditioningVariant::None),
            other => Err(NcsrError::Config(format!("unknown conditioning variant `{other}`"))),
        }
    }
}

/// Architecture record, serialized into every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub scale_factor: usize,
    pub levels: usize,
    pub flow_steps_per_level: usize,
    /// Blocks carrying a noise conditional layer, numbered 1..=levels in the
    /// order the sampling pass visits them (block 1 is the deepest level,
    /// block `levels` is the one that produces the image).
    pub ncl_blocks: Vec<usize>,
    pub conditioning_variant: ConditioningVariant,
    pub encoder_blocks: usize,
    pub encoder_width: usize,
    pub coupling_hidden: usize,
    pub noise_m: f64,
    pub temperature_default: f64,
    /// Learned conditional Gaussian at each split; `false` forces N(0, I).
    pub conditional_prior: bool,
    pub scale_bound: f64,
    /// Reject configs whose final sampling block carries a noise
    /// conditional layer; when `false` they only log a warning.
    pub strict_noise_free: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale_factor: 4,
            levels: 3,
            flow_steps_per_level: 4,
            ncl_blocks: vec![1, 2],
            conditioning_variant: ConditioningVariant::Noise,
            encoder_blocks: 2,
            encoder_width: 32,
            coupling_hidden: 32,
            noise_m: 0.1,
            temperature_default: 0.9,
            conditional_prior: true,
            scale_bound: DEFAULT_SCALE_BOUND,
            strict_noise_free: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NcsrError::Config(m));
        if ![2, 4, 8].contains(&self.scale_factor) {
            return bad(format!("model.scale_factor must be 2, 4 or 8, got {}", self.scale_factor));
        }
        if self.levels == 0 {
            return bad("model.levels must be >= 1".into());
        }
        if self.flow_steps_per_level == 0 {
            return bad("model.flow_steps_per_level must be >= 1".into());
        }
        if self.encoder_width == 0 || self.coupling_hidden == 0 {
            return bad("model.encoder_width and model.coupling_hidden must be >= 1".into());
        }
        if !(self.noise_m >= 0.0) {
            return bad(format!("model.noise_m must be >= 0, got {}", self.noise_m));
        }
        if !(self.temperature_default >= 0.0) {
            return bad(format!("model.temperature_default must be >= 0, got {}", self.temperature_default));
        }
        if !(self.scale_bound > 0.0) {
            return bad(format!("model.scale_bound must be > 0, got {}", self.scale_bound));
        }
        if let Some(&b) = self.ncl_blocks.iter().find(|&&b| b == 0 || b > self.levels) {
            return bad(format!("model.ncl_blocks entry {b} outside 1..={}", self.levels));
        }
        if self.conditioning_variant != ConditioningVariant::None && self.ncl_blocks.contains(&self.levels) {
            let msg = format!(
                "model.ncl_blocks contains block {}, the final block of the sampling pass; \
                 the block that produces the image must be noise-free",
                self.levels
            );
            if self.strict_noise_free {
                return bad(msg);
            }
            log::warn!("{msg}");
        }
        Ok(())
    }

    /// Every field as `(key, value)` text, without a prefix.
    pub fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("scale_factor", self.scale_factor.to_string()),
            e("levels", self.levels.to_string()),
            e("flow_steps_per_level", self.flow_steps_per_level.to_string()),
            e("ncl_blocks", kv::render_list(&self.ncl_blocks)),
            e("conditioning_variant", self.conditioning_variant.to_string()),
            e("encoder_blocks", self.encoder_blocks.to_string()),
            e("encoder_width", self.encoder_width.to_string()),
            e("coupling_hidden", self.coupling_hidden.to_string()),
            e("noise_m", kv::render_f64(self.noise_m)),
            e("temperature_default", kv::render_f64(self.temperature_default)),
            e("conditional_prior", self.conditional_prior.to_string()),
            e("scale_bound", kv::render_f64(self.scale_bound)),
            e("strict_noise_free", self.strict_noise_free.to_string()),
        ]
    }

    /// Set one field by key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scale_factor" => self.scale_factor = kv::parse_usize(key, value)?,
            "levels" => self.levels = kv::parse_usize(key, value)?,
            "flow_steps_per_level" => self.flow_steps_per_level = kv::parse_usize(key, value)?,
            "ncl_blocks" => self.ncl_blocks = kv::parse_usize_list(key, value)?,
            "conditioning_variant" => self.conditioning_variant = value.parse()?,
            "encoder_blocks" => self.encoder_blocks = kv::parse_usize(key, value)?,
            "encoder_width" => self.encoder_width = kv::parse_usize(key, value)?,
            "coupling_hidden" => self.coupling_hidden = kv::parse_usize(key, value)?,
            "noise_m" => self.noise_m = kv::parse_f64(key, value)?,
            "temperature_default" => self.temperature_default = kv::parse_f64(key, value)?,
            "conditional_prior" => self.conditional_prior = kv::parse_bool(key, value)?,
            "scale_bound" => self.scale_bound = kv::parse_f64(key, value)?,
            "strict_noise_free" => self.strict_noise_free = kv::parse_bool(key, value)?,
            _ => return Err(NcsrError::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.entries())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for e in kv::parse(text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| NcsrError::Config(format!("line {}: {err}", e.line)))?;
        }
        Ok(cfg)
    }

    /// Patch sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.scale_factor << self.levels
    }

    pub fn check_hr_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(NcsrError::InvalidArgument(format!(
                "HR size {h}x{w} is not a multiple of scale * 2^levels = {m}"
            )));
        }
        Ok(())
    }

    /// Block index (sampling order) of forward level `level` (1-based).
    pub fn block_of_level(&self, level: usize) -> usize {
        self.levels + 1 - level
    }

    pub fn level_has_ncl(&self, level: usize) -> bool {
        self.conditioning_variant != ConditioningVariant::None && self.ncl_blocks.contains(&self.block_of_level(level))
    }

    /// Channels of the flow activation at `level` after its squeeze.
    pub fn level_channels(&self, level: usize) -> usize {
        3 * (2usize << level)
    }

    /// Extra conditioning channels read by the noise conditional layer at `level`.
    pub fn extra_channels(&self, level: usize) -> usize {
        match self.conditioning_variant {
            ConditioningVariant::Noise => 3 << (2 * level),
            ConditioningVariant::Std => 1,
            ConditioningVariant::None => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn final_block_must_be_noise_free() {
        let cfg = ModelConfig {
            ncl_blocks: vec![1, 2, 3],
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("noise-free"), "{err}");
        let permissive = ModelConfig {
            strict_noise_free: false,
            ..cfg.clone()
        };
        permissive.validate().unwrap();
        let none = ModelConfig {
            conditioning_variant: ConditioningVariant::None,
            ..cfg
        };
        none.validate().unwrap();
    }

    #[test]
    fn block_numbering_follows_sampling_order() {
        let cfg = ModelConfig::default();
        assert!(!cfg.level_has_ncl(1));
        assert!(cfg.level_has_ncl(2));
        assert!(cfg.level_has_ncl(3));
        assert_eq!(cfg.level_channels(1), 12);
        assert_eq!(cfg.level_channels(3), 48);
        assert_eq!(cfg.extra_channels(2), 48);
        assert_eq!(cfg.size_multiple(), 32);
    }

    #[test]
    fn text_round_trip() {
        let cfg = ModelConfig {
            ncl_blocks: vec![],
            conditioning_variant: ConditioningVariant::Std,
            noise_m: 0.123456789,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let err = ModelConfig::from_text("levels = 2\nwidth = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("width"), "{err}");
    }
}
