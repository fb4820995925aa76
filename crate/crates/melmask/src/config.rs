//! Run configuration: a line-oriented `key = value` format with `[section]`
//! headers, merged with command-line `--set section.key=value` overrides.
//!
//! Unknown sections or keys are rejected, every value is validated before
//! any command does work, and the canonical rendering of the active
//! configuration is embedded verbatim in checkpoints.

use crate::error::{Error, Result};
use crate::masking::{PatchConfig, SQUARE, VERTICAL};
use crate::objectives::ObjectiveConfig;
use crate::trainer::{ObjectiveKind, TrainConfig};
use crate::vit::{DecoderConfig, ModelConfig};

/// Fixed DSP geometry. These keys exist so config files are self-describing;
/// only the shipped values are supported.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSection {
    pub sample_rate: u32,
    pub frame: usize,
    pub hop: usize,
    pub mel_bins: usize,
}

impl Default for AudioSection {
    fn default() -> Self {
        AudioSection {
            sample_rate: 16_000,
            frame: 1024,
            hop: 500,
            mel_bins: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub proj_dim: usize,
    /// "square", "vertical", or "hybrid".
    pub patches: String,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 128,
            patches: "square".into(),
            decoder_dim: 64,
            decoder_depth: 2,
            decoder_heads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub lr: f32,
    pub weight_decay: f32,
    pub tau: f32,
    pub symmetrize: bool,
    pub denominator_includes_positive: bool,
    pub steps: u64,
    pub seed: u64,
    /// "contrastive" or "mae".
    pub objective: String,
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            mask_ratio: 0.9,
            lr: 3e-4,
            weight_decay: 1e-5,
            tau: 0.1,
            symmetrize: true,
            denominator_includes_positive: false,
            steps: 300,
            seed: 0,
            objective: "contrastive".into(),
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// Training progress; written by checkpoints, not meant for config files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateSection {
    pub step: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub audio: AudioSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub state: StateSection,
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim();
                if !matches!(name, "audio" | "model" | "train" | "probe" | "state") {
                    return Err(Error::Config(format!("line {}: unknown section [{name}]", lineno + 1)));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key `{key}` before any [section] header",
                    lineno + 1
                )));
            }
            cfg.set(&section, key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse_str(&text)
    }

    /// Apply one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` is not section.key")))?;
        self.set(section.trim(), key.trim(), value.trim())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key `{section}.{key}`"));
        match section {
            "audio" => match key {
                "sample_rate" => self.audio.sample_rate = parse(section, key, value)?,
                "frame" => self.audio.frame = parse(section, key, value)?,
                "hop" => self.audio.hop = parse(section, key, value)?,
                "mel_bins" => self.audio.mel_bins = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "model" => match key {
                "dim" => self.model.dim = parse(section, key, value)?,
                "depth" => self.model.depth = parse(section, key, value)?,
                "heads" => self.model.heads = parse(section, key, value)?,
                "mlp_ratio" => self.model.mlp_ratio = parse(section, key, value)?,
                "proj_dim" => self.model.proj_dim = parse(section, key, value)?,
                "patches" => self.model.patches = value.to_string(),
                "decoder_dim" => self.model.decoder_dim = parse(section, key, value)?,
                "decoder_depth" => self.model.decoder_depth = parse(section, key, value)?,
                "decoder_heads" => self.model.decoder_heads = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "train" => match key {
                "batch_size" => self.train.batch_size = parse(section, key, value)?,
                "mask_ratio" => self.train.mask_ratio = parse(section, key, value)?,
                "lr" => self.train.lr = parse(section, key, value)?,
                "weight_decay" => self.train.weight_decay = parse(section, key, value)?,
                "tau" => self.train.tau = parse(section, key, value)?,
                "symmetrize" => self.train.symmetrize = parse_bool(section, key, value)?,
                "denominator_includes_positive" => {
                    self.train.denominator_includes_positive = parse_bool(section, key, value)?
                }
                "steps" => self.train.steps = parse(section, key, value)?,
                "seed" => self.train.seed = parse(section, key, value)?,
                "objective" => self.train.objective = value.to_string(),
                "log_every" => self.train.log_every = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "probe" => match key {
                "max_epochs" => self.probe.max_epochs = parse(section, key, value)?,
                "patience" => self.probe.patience = parse(section, key, value)?,
                "seed" => self.probe.seed = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "state" => match key {
                "step" => self.state.step = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            _ => return Err(Error::Config(format!("unknown section `{section}`"))),
        }
        Ok(())
    }

    /// Full validation; every command calls this before doing any work.
    pub fn validate(&self) -> Result<()> {
        let a = &self.audio;
        let d = AudioSection::default();
        if *a != d {
            return Err(Error::Config(format!(
                "unsupported audio settings (this build is fixed at sample_rate={}, frame={}, hop={}, mel_bins={})",
                d.sample_rate, d.frame, d.hop, d.mel_bins
            )));
        }
        if !matches!(self.model.patches.as_str(), "square" | "vertical" | "hybrid") {
            return Err(Error::Config(format!(
                "model.patches must be square, vertical, or hybrid (got `{}`)",
                self.model.patches
            )));
        }
        if !matches!(self.train.objective.as_str(), "contrastive" | "mae") {
            return Err(Error::Config(format!(
                "train.objective must be contrastive or mae (got `{}`)",
                self.train.objective
            )));
        }
        if self.train.objective == "mae" && self.model.patches == "hybrid" {
            return Err(Error::Config(
                "the mae objective trains a single patch layout (square or vertical)".into(),
            ));
        }
        if self.train.batch_size < 2 {
            return Err(Error::BatchSize(format!(
                "train.batch_size {} must be >= 2",
                self.train.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.train.mask_ratio) {
            return Err(Error::Parameter(format!(
                "train.mask_ratio {} outside [0,1)",
                self.train.mask_ratio
            )));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Parameter("train.lr must be > 0".into()));
        }
        if !(self.train.tau > 0.0) {
            return Err(Error::Parameter("train.tau must be > 0".into()));
        }
        if self.train.weight_decay < 0.0 {
            return Err(Error::Parameter("train.weight_decay must be >= 0".into()));
        }
        if self.probe.max_epochs == 0 || self.probe.patience == 0 {
            return Err(Error::Parameter(
                "probe.max_epochs and probe.patience must be >= 1".into(),
            ));
        }
        self.model_config()?.validate()
    }

    /// Canonical rendering: fixed section and key order, every key explicit.
    pub fn to_canonical_text(&self) -> String {
        let a = &self.audio;
        let m = &self.model;
        let t = &self.train;
        let p = &self.probe;
        let mut out = String::new();
        use std::fmt::Write;
        let _ = write!(
            out,
            "[audio]\nsample_rate = {}\nframe = {}\nhop = {}\nmel_bins = {}\n\n\
             [model]\ndim = {}\ndepth = {}\nheads = {}\nmlp_ratio = {}\nproj_dim = {}\npatches = {}\ndecoder_dim = {}\ndecoder_depth = {}\ndecoder_heads = {}\n\n\
             [train]\nbatch_size = {}\nmask_ratio = {}\nlr = {}\nweight_decay = {}\ntau = {}\nsymmetrize = {}\ndenominator_includes_positive = {}\nsteps = {}\nseed = {}\nobjective = {}\nlog_every = {}\n\n\
             [probe]\nmax_epochs = {}\npatience = {}\nseed = {}\n\n\
             [state]\nstep = {}\n",
            a.sample_rate, a.frame, a.hop, a.mel_bins,
            m.dim, m.depth, m.heads, m.mlp_ratio, m.proj_dim, m.patches,
            m.decoder_dim, m.decoder_depth, m.decoder_heads,
            t.batch_size, t.mask_ratio, t.lr, t.weight_decay, t.tau,
            t.symmetrize, t.denominator_includes_positive, t.steps, t.seed,
            t.objective, t.log_every,
            p.max_epochs, p.patience, p.seed,
            self.state.step,
        );
        out
    }

    pub fn patch_cfgs(&self) -> Vec<PatchConfig> {
        match self.model.patches.as_str() {
            "square" => vec![SQUARE],
            "vertical" => vec![VERTICAL],
            _ => vec![SQUARE, VERTICAL],
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let decoder = if self.train.objective == "mae" {
            Some(DecoderConfig {
                dim: self.model.decoder_dim,
                depth: self.model.decoder_depth,
                heads: self.model.decoder_heads,
            })
        } else {
            None
        };
        Ok(ModelConfig {
            dim: self.model.dim,
            depth: self.model.depth,
            heads: self.model.heads,
            mlp_ratio: self.model.mlp_ratio,
            proj_dim: self.model.proj_dim,
            patch_cfgs: self.patch_cfgs(),
            decoder,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            mask_ratio: self.train.mask_ratio,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            objective: ObjectiveConfig {
                tau: self.train.tau,
                symmetrize: self.train.symmetrize,
                denominator_includes_positive: self.train.denominator_includes_positive,
            },
            kind: if self.train.objective == "mae" {
                ObjectiveKind::Mae
            } else {
                ObjectiveKind::Contrastive
            },
            steps: self.train.steps,
            seed: self.train.seed,
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for {section}.{key}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean `{value}` for {section}.{key}"
        ))),
    }
}
