//! Run configuration: UTF-8 `key = value` lines with dotted keys
//! (`train.lr = 0.005`). A `[section]` line prefixes the keys below it, `#`
//! starts a comment. Every key has a default and unknown keys are rejected.
//!
//! ```
//! use lidnet::config::RunConfig;
//!
//! let cfg = RunConfig::parse("[model]\nblocks = 3\n\ntrain.seed = 7\n").unwrap();
//! assert_eq!(cfg.model.blocks, 3);
//! assert_eq!(cfg.train.seed, 7);
//! assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
//! ```

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::data::LabelSet;
use crate::encoder::{default_kernel_schedule, EncoderConfig};
use crate::error::{LidError, Result};
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub blocks: usize,
    pub subblocks: usize,
    pub channels: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    /// `None` derives the schedule from `blocks`.
    pub kernel_schedule: Option<Vec<usize>>,
    pub separable: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            blocks: 15,
            subblocks: 5,
            channels: 512,
            attention_dim: 256,
            dropout: 0.2,
            kernel_schedule: None,
            separable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub labels: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            val: None,
            labels: LabelSet::standard().codes().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub model: ModelSection,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub data: DataSection,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| LidError::Config(format!("{key} = `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: LidError| match e {
                LidError::Config(msg) => LidError::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(LidError::Config(format!("expected `key = value`, found `{line}`"))))?;
            let key = key.trim();
            let key = if section.is_empty() || key.contains('.') {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&key, value.trim()).map_err(at)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LidError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.features;
        let m = &mut self.model;
        let a = &mut self.augment;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "features.sample_rate" => f.sample_rate = parse_value(key, value)?,
            "features.window" => f.window = parse_value(key, value)?,
            "features.hop" => f.hop = parse_value(key, value)?,
            "features.fft_size" => f.fft_size = parse_value(key, value)?,
            "features.n_mels" => f.n_mels = parse_value(key, value)?,
            "features.f_min" => f.f_min = parse_value(key, value)?,
            "features.f_max" => f.f_max = parse_value(key, value)?,
            "features.log_floor" => f.log_floor = parse_value(key, value)?,
            "features.pre_emphasis" => f.pre_emphasis = parse_value(key, value)?,
            "features.normalize" => f.normalize = parse_value(key, value)?,
            "model.blocks" => m.blocks = parse_value(key, value)?,
            "model.subblocks" => m.subblocks = parse_value(key, value)?,
            "model.channels" => m.channels = parse_value(key, value)?,
            "model.attention_dim" => m.attention_dim = parse_value(key, value)?,
            "model.dropout" => m.dropout = parse_value(key, value)?,
            "model.kernel_schedule" => {
                m.kernel_schedule = match value {
                    "auto" => None,
                    _ => Some(parse_list(key, value)?),
                }
            }
            "model.separable" => m.separable = parse_value(key, value)?,
            "augment.enabled" => a.enabled = parse_value(key, value)?,
            "augment.freq_mask_param" => a.freq_mask_param = parse_value(key, value)?,
            "augment.n_freq_masks" => a.n_freq_masks = parse_value(key, value)?,
            "augment.time_mask_param" => a.time_mask_param = parse_value(key, value)?,
            "augment.n_time_masks" => a.n_time_masks = parse_value(key, value)?,
            "augment.mask_value" => a.mask_value = parse_value(key, value)?,
            "train.lr" => t.lr_init = parse_value(key, value)?,
            "train.lr_min" => t.lr_min = parse_value(key, value)?,
            "train.total_steps" => {
                t.total_steps = match value {
                    "auto" => None,
                    _ => Some(parse_value(key, value)?),
                }
            }
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.max_epochs" => t.max_epochs = parse_value(key, value)?,
            "train.patience" => t.patience = parse_value(key, value)?,
            "train.min_delta" => t.min_delta = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "train.bucket_by_length" => t.bucket_by_length = parse_value(key, value)?,
            "train.crop_frames" => {
                t.crop_frames = match parse_value::<usize>(key, value)? {
                    0 => None,
                    n => Some(n),
                }
            }
            "data.train" => d.train = optional_path(value),
            "data.val" => d.val = optional_path(value),
            "data.labels" => d.labels = parse_list(key, value)?,
            _ => return Err(LidError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let f = &self.features;
        let m = &self.model;
        let a = &self.augment;
        let t = &self.train;
        let d = &self.data;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        [
            ("features.sample_rate", f.sample_rate.to_string()),
            ("features.window", f.window.to_string()),
            ("features.hop", f.hop.to_string()),
            ("features.fft_size", f.fft_size.to_string()),
            ("features.n_mels", f.n_mels.to_string()),
            ("features.f_min", f.f_min.to_string()),
            ("features.f_max", f.f_max.to_string()),
            ("features.log_floor", f.log_floor.to_string()),
            ("features.pre_emphasis", f.pre_emphasis.to_string()),
            ("features.normalize", f.normalize.to_string()),
            ("model.blocks", m.blocks.to_string()),
            ("model.subblocks", m.subblocks.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.attention_dim", m.attention_dim.to_string()),
            ("model.dropout", m.dropout.to_string()),
            (
                "model.kernel_schedule",
                m.kernel_schedule.as_deref().map_or("auto".into(), join),
            ),
            ("model.separable", m.separable.to_string()),
            ("augment.enabled", a.enabled.to_string()),
            ("augment.freq_mask_param", a.freq_mask_param.to_string()),
            ("augment.n_freq_masks", a.n_freq_masks.to_string()),
            ("augment.time_mask_param", a.time_mask_param.to_string()),
            ("augment.n_time_masks", a.n_time_masks.to_string()),
            ("augment.mask_value", a.mask_value.to_string()),
            ("train.lr", t.lr_init.to_string()),
            ("train.lr_min", t.lr_min.to_string()),
            ("train.total_steps", t.total_steps.map_or("auto".into(), |s| s.to_string())),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.min_delta", t.min_delta.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.bucket_by_length", t.bucket_by_length.to_string()),
            ("train.crop_frames", t.crop_frames.unwrap_or(0).to_string()),
            ("data.train", path(&d.train)),
            ("data.val", path(&d.val)),
            ("data.labels", join(&d.labels)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Rebuilds a configuration from checkpoint snapshot entries.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::from_codes(&self.data.labels)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        Ok(ModelConfig {
            encoder: EncoderConfig {
                input_dim: self.features.n_mels,
                blocks: m.blocks,
                subblocks: m.subblocks,
                channels: m.channels,
                kernel_schedule: m
                    .kernel_schedule
                    .clone()
                    .unwrap_or_else(|| default_kernel_schedule(m.blocks)),
                dropout: m.dropout,
                separable: m.separable,
            },
            attention_dim: m.attention_dim,
            num_classes: self.label_set()?.len(),
        })
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model_config()?.validate()?;
        self.augment.validate(self.features.n_mels)?;
        self.train.validate()
    }
}
