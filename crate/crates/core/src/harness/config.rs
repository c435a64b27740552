//! Flat key-value run configuration.
//!
//! Every key has a default (the full-scale setting); a file only needs the
//! keys it changes. `key=value` overrides are applied on top of the file
//! before validation, so command-line flags win.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{PriorTraining, ScheduleConfig, UNetConfig};
use crate::enhancer::EnhancerConfig;
use crate::losses::LossWeights;
use crate::{Error, Result};

use super::train::StageTraining;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    pub prior_epochs: usize,
    pub prior_lr: f64,
    pub prior_batch: usize,
    pub prior_crop: usize,
    /// Share of scored random crops kept for prior training.
    pub crop_fraction: f64,
    pub crops_per_image: usize,

    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    pub unet_base_channels: usize,
    pub unet_depth: usize,
    pub unet_time_embed_dim: usize,
    pub unet_channel_mults: Vec<usize>,

    pub guide_channels: usize,
    pub fusion_channels: usize,
    /// Empty selects every encoder stage.
    pub encoder_stages: Vec<usize>,
    pub epsilon: f64,
    pub illumination_floor: f64,
    pub illumination_channels: usize,

    pub spatial_epochs: usize,
    pub spatial_batch: usize,
    pub spatial_lr: f64,
    pub temporal_epochs: usize,
    pub temporal_batch: usize,
    pub temporal_lr: f64,

    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_t: f64,
    pub lambda_g: f64,

    pub flow_alpha: f64,
    pub flow_iters: usize,
}

impl Default for Config {
    fn default() -> Self {
        let unet = UNetConfig::full();
        let sched = ScheduleConfig::full();
        let enh = EnhancerConfig::full();
        let w = LossWeights::default();
        Self {
            seed: 0,
            prior_epochs: 100,
            prior_lr: 1e-4,
            prior_batch: 24,
            prior_crop: 256,
            crop_fraction: 0.5,
            crops_per_image: 8,
            diffusion_steps: sched.steps,
            beta_start: sched.beta_start,
            beta_end: sched.beta_end,
            unet_base_channels: unet.base_channels,
            unet_depth: unet.depth,
            unet_time_embed_dim: unet.time_embed_dim,
            unet_channel_mults: unet.channel_mults,
            guide_channels: enh.guide_channels,
            fusion_channels: enh.fusion_channels,
            encoder_stages: Vec::new(),
            epsilon: enh.epsilon,
            illumination_floor: enh.illumination_floor,
            illumination_channels: enh.illumination_channels,
            spatial_epochs: 100,
            spatial_batch: 64,
            spatial_lr: 1e-4,
            temporal_epochs: 100,
            temporal_batch: 24,
            temporal_lr: 1e-4,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            lambda_t: w.lambda_t,
            lambda_g: w.lambda_g,
            flow_alpha: crate::flow::DEFAULT_ALPHA,
            flow_iters: crate::flow::DEFAULT_ITERS,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    /// Small models and short schedules that train on a laptop CPU.
    pub fn desk() -> Self {
        let unet = UNetConfig::desk();
        let enh = EnhancerConfig::desk();
        Self {
            prior_epochs: 30,
            prior_lr: 1e-3,
            prior_crop: 32,
            diffusion_steps: ScheduleConfig::desk().steps,
            unet_base_channels: unet.base_channels,
            unet_depth: unet.depth,
            unet_time_embed_dim: unet.time_embed_dim,
            unet_channel_mults: unet.channel_mults,
            guide_channels: enh.guide_channels,
            fusion_channels: enh.fusion_channels,
            spatial_epochs: 40,
            spatial_batch: 8,
            spatial_lr: 2e-3,
            temporal_epochs: 10,
            temporal_batch: 4,
            temporal_lr: 5e-4,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides (values in TOML
    /// syntax; bare words are taken as strings).
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            base_channels: self.unet_base_channels,
            depth: self.unet_depth,
            time_embed_dim: self.unet_time_embed_dim,
            channel_mults: self.unet_channel_mults.clone(),
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.diffusion_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn enhancer(&self) -> EnhancerConfig {
        EnhancerConfig {
            guide_channels: self.guide_channels,
            fusion_channels: self.fusion_channels,
            encoder_stages: (!self.encoder_stages.is_empty()).then(|| self.encoder_stages.clone()),
            epsilon: self.epsilon,
            illumination_floor: self.illumination_floor,
            illumination_channels: self.illumination_channels,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda_t: self.lambda_t,
            lambda_g: self.lambda_g,
        }
    }

    pub fn prior_training(&self) -> PriorTraining {
        PriorTraining {
            epochs: self.prior_epochs,
            lr: self.prior_lr,
            batch_size: self.prior_batch,
            seed: self.seed,
        }
    }

    pub fn spatial_training(&self) -> StageTraining {
        StageTraining {
            epochs: self.spatial_epochs,
            batch_size: self.spatial_batch,
            lr: self.spatial_lr,
            seed: self.seed,
            flow_alpha: self.flow_alpha,
            flow_iters: self.flow_iters,
        }
    }

    pub fn temporal_training(&self) -> StageTraining {
        StageTraining {
            epochs: self.temporal_epochs,
            batch_size: self.temporal_batch,
            lr: self.temporal_lr,
            ..self.spatial_training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("prior_epochs", self.prior_epochs),
            ("prior_batch", self.prior_batch),
            ("prior_crop", self.prior_crop),
            ("crops_per_image", self.crops_per_image),
            ("spatial_epochs", self.spatial_epochs),
            ("spatial_batch", self.spatial_batch),
            ("temporal_epochs", self.temporal_epochs),
            ("temporal_batch", self.temporal_batch),
            ("flow_iters", self.flow_iters),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        for (k, v) in [("prior_lr", self.prior_lr), ("spatial_lr", self.spatial_lr), ("temporal_lr", self.temporal_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config(format!("crop_fraction must be in (0, 1], got {}", self.crop_fraction)));
        }
        if !(self.flow_alpha > 0.0) {
            return Err(Error::Config("flow_alpha must be > 0".into()));
        }
        let unet = self.unet();
        unet.validate()?;
        unet.check_input(self.prior_crop, self.prior_crop)?;
        self.schedule().build()?;
        self.enhancer().validate(unet.depth)?;
        self.weights().validate()
    }
}
