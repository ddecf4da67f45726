//! Scenario configuration shared by every subcommand.
//!
//! Values resolve in three layers: built-in defaults, then a TOML file of
//! flat `key = value` pairs, then `--key=value` flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Batch size.
    pub n: usize,
    pub h: usize,
    pub w: usize,
    /// Channels per pixel.
    pub d: usize,
    pub heads: usize,
    /// Gaussian smoothing standard deviation.
    pub sigma: f64,
    pub seed: u64,
    /// Planted Gaussian bumps per sample.
    pub blobs: usize,
    /// Add sinusoidal positions to the Keys before clustering.
    pub positions: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 4,
            h: 32,
            w: 32,
            d: 64,
            heads: 8,
            sigma: 5.0,
            seed: 7,
            blobs: 3,
            positions: true,
        }
    }
}

impl ScenarioConfig {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Small scenario used for finite-difference checks (HW = 8, d = 4).
    pub fn gradcheck_default() -> Self {
        Self {
            n: 2,
            h: 2,
            w: 4,
            d: 4,
            heads: 2,
            sigma: 1.0,
            seed: 3,
            blobs: 1,
            positions: true,
        }
    }

    /// Scenario used for the toy training loop.
    pub fn training_default() -> Self {
        Self {
            n: 4,
            h: 16,
            w: 16,
            d: 16,
            heads: 2,
            sigma: 3.0,
            seed: 11,
            blobs: 3,
            positions: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [("n", self.n), ("h", self.h), ("w", self.w), ("d", self.d), ("heads", self.heads)];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Config(format!("{name} must be at least 1")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(HarnessError::Config(format!(
                "d={} is not divisible by heads={}",
                self.d, self.heads
            )));
        }
        if self.positions && !self.d.is_multiple_of(2) {
            return Err(HarnessError::Config(format!(
                "positional encodings need an even d, got {}",
                self.d
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(HarnessError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            learning_rate: 2.0,
        }
    }
}

/// Optional value for every configurable field; used for both the config
/// file and the command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub positions: Option<bool>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "learning-rate")]
    #[serde(alias = "learning-rate")]
    pub learning_rate: Option<f64>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `other` win.
    pub fn layered(self, other: &ConfigOverrides) -> Self {
        Self {
            n: other.n.or(self.n),
            h: other.h.or(self.h),
            w: other.w.or(self.w),
            d: other.d.or(self.d),
            heads: other.heads.or(self.heads),
            sigma: other.sigma.or(self.sigma),
            seed: other.seed.or(self.seed),
            blobs: other.blobs.or(self.blobs),
            positions: other.positions.or(self.positions),
            steps: other.steps.or(self.steps),
            learning_rate: other.learning_rate.or(self.learning_rate),
        }
    }

    pub fn scenario(&self, base: ScenarioConfig) -> Result<ScenarioConfig> {
        let config = ScenarioConfig {
            n: self.n.unwrap_or(base.n),
            h: self.h.unwrap_or(base.h),
            w: self.w.unwrap_or(base.w),
            d: self.d.unwrap_or(base.d),
            heads: self.heads.unwrap_or(base.heads),
            sigma: self.sigma.unwrap_or(base.sigma),
            seed: self.seed.unwrap_or(base.seed),
            blobs: self.blobs.unwrap_or(base.blobs),
            positions: self.positions.unwrap_or(base.positions),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn training(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            steps: self.steps.unwrap_or(base.steps),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ScenarioConfig::default().validate().unwrap();
        ScenarioConfig::gradcheck_default().validate().unwrap();
        ScenarioConfig::training_default().validate().unwrap();
        assert_eq!(ScenarioConfig::default().hw(), 1024);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            ScenarioConfig { n: 0, ..Default::default() },
            ScenarioConfig { heads: 5, ..Default::default() },
            ScenarioConfig { sigma: 0.0, ..Default::default() },
            ScenarioConfig { d: 3, heads: 1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let odd_without_positions = ScenarioConfig { d: 3, heads: 1, positions: false, ..Default::default() };
        assert!(odd_without_positions.validate().is_ok());
    }

    #[test]
    fn file_then_flags() {
        let file = ConfigOverrides::from_toml("n = 2\nsigma = 3.0\nseed = 99\nsteps = 5\n").unwrap();
        let flags = ConfigOverrides { sigma: Some(1.5), ..Default::default() };
        let merged = file.layered(&flags);
        let cfg = merged.scenario(ScenarioConfig::default()).unwrap();
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.sigma, 1.5);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.d, 64);
        assert_eq!(merged.training(TrainConfig::default()).steps, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigOverrides::from_toml("batch = 3").is_err());
    }
}
