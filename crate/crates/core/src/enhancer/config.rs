use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancerConfig {
    pub guide_channels: usize,
    pub fusion_channels: usize,
    /// Encoder stages fed to the fusion; `None` selects every stage.
    #[serde(default)]
    pub encoder_stages: Option<Vec<usize>>,
    pub epsilon: f64,
    pub illumination_floor: f64,
    /// 3 for per-channel illumination, 1 for a shared grey map.
    pub illumination_channels: usize,
}

impl EnhancerConfig {
    pub fn full() -> Self {
        Self {
            guide_channels: 64,
            fusion_channels: 256,
            encoder_stages: None,
            epsilon: 1e-4,
            illumination_floor: 0.05,
            illumination_channels: 3,
        }
    }

    pub fn desk() -> Self {
        Self {
            guide_channels: 8,
            fusion_channels: 16,
            ..Self::full()
        }
    }

    /// Selected stage indices for an encoder with `depth` stride-2 stages.
    pub fn stages(&self, depth: usize) -> Vec<usize> {
        match &self.encoder_stages {
            Some(s) => s.clone(),
            None => (0..=depth).collect(),
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.illumination_floor > 0.0 && self.illumination_floor < 1.0) {
            return Err(Error::Config(format!(
                "illumination_floor must be in (0, 1), got {}",
                self.illumination_floor
            )));
        }
        if self.guide_channels == 0 || self.fusion_channels == 0 {
            return Err(Error::Config("guide_channels and fusion_channels must be >= 1".into()));
        }
        if self.illumination_channels != 1 && self.illumination_channels != 3 {
            return Err(Error::Config(format!(
                "illumination_channels must be 1 or 3, got {}",
                self.illumination_channels
            )));
        }
        let stages = self.stages(depth);
        let mut sorted = stages.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != stages.len() || stages.iter().any(|&k| k > depth) {
            return Err(Error::Config(format!(
                "encoder_stages {stages:?} must be distinct indices in 0..={depth}"
            )));
        }
        Ok(())
    }
}
