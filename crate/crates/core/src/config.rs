//! Run configuration, read from TOML. Unknown keys are rejected at every
//! level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::metric::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity in a batch.
    pub k: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, epochs: 20, p: 16, k: 4 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("optim: lr must be positive".into()));
        }
        if self.epochs == 0 || self.p < 2 || self.k < 2 {
            return Err(Error::Config("optim: epochs must be positive, p and k at least 2".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: SyntheticConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            data: SyntheticConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces the run seed and the data seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.data.validate()?;
        self.eval.scenario_specs()?;
        if self.encoder.num_patches != self.data.num_patches || self.encoder.patch_dim != self.data.patch_dim {
            return Err(Error::Config("encoder num_patches/patch_dim must match data".into()));
        }
        if self.optim.p > self.data.train_identities() {
            return Err(Error::Config(format!(
                "optim.p = {} exceeds the {} training identities",
                self.optim.p,
                self.data.train_identities()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[optim]\nepochs = 2\n[loss]\nw1 = 0.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.optim.epochs, 2);
        assert_eq!(cfg.optim.p, 16);
        assert_eq!(cfg.loss.w1, 0.0);
        assert_eq!(cfg.loss.w2, 5.25);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in ["sed = 1", "[optim]\nlearning_rate = 0.1", "[bogus]\nx = 1", "[data]\nnum_ids = 3"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn range_checks() {
        assert!(RunConfig::from_toml("[data]\nnum_identities = 1").is_err());
        assert!(RunConfig::from_toml("[optim]\nlr = -1.0").is_err());
        assert!(RunConfig::from_toml("[eval]\nscenarios = [\"X-to-R\"]").is_err());
        assert!(RunConfig::from_toml("[encoder]\nnum_patches = 8").is_err());
    }
}
