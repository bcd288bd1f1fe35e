//! The run configuration: one TOML file with a section per stage. Every key
//! has a default and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, UrpError};
use crate::grpo::GrpoConfig;
use crate::policy::{Ablation, ModelConfig};
use crate::reward::RewardConfig;
use crate::sft::SftConfig;
use crate::world::{Indicator, Split, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub seed: u64,
    pub n_regions: usize,
    /// Regions with `x >= boundary` form the unseen band.
    pub boundary: f64,
    pub indicators: Vec<Indicator>,
    pub noise: f64,
    /// Additive score offset applied in the unseen band, per indicator.
    pub shifts: BTreeMap<Indicator, f64>,
    /// Train / val / test_seen fractions of the seen regions.
    pub split_fractions: [f64; 3],
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        WorldSection {
            seed: 0,
            n_regions: 600,
            boundary: w.split_boundary,
            indicators: w.indicators,
            noise: w.noise_sigma,
            shifts: w.shifts,
            split_fractions: w.split_fractions,
        }
    }
}

impl WorldSection {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            split_boundary: self.boundary,
            noise_sigma: self.noise,
            indicators: self.indicators.clone(),
            shifts: self.shifts.clone(),
            split_fractions: self.split_fractions,
            ..WorldConfig::default()
        }
    }
}

/// Format warm-up shared by both trainers: SFT on randomly valued answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSection {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds parameter initialization and the warm-up answers.
    pub seed: u64,
}

impl Default for BaseSection {
    fn default() -> Self {
        BaseSection {
            enabled: true,
            epochs: 2,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub splits: Vec<Split>,
    pub ablate_image: bool,
    pub ablate_text: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            splits: vec![Split::TestSeen, Split::TestUnseen],
            ablate_image: false,
            ablate_text: false,
        }
    }
}

impl EvalSection {
    pub fn ablation(&self) -> Ablation {
        Ablation {
            use_raster: !self.ablate_image,
            use_text: !self.ablate_text,
        }
    }
}

/// Default locations, relative to the working directory. Command-line paths
/// take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "data".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldSection,
    pub model: ModelConfig,
    pub reward: RewardConfig,
    pub base: BaseSection,
    pub grpo: GrpoConfig,
    pub sft: SftConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| UrpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => UrpError::Config(format!("config file {} not found", path.display())),
            _ => UrpError::io(path, e),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.world_config().validate()?;
        if self.world.n_regions < 10 {
            return Err(UrpError::Config("world.n_regions must be at least 10".into()));
        }
        self.model.validate()?;
        self.reward.validate()?;
        self.grpo.validate()?;
        self.sft.validate()?;
        if self.base.epochs == 0 || self.base.batch_size == 0 || !(self.base.learning_rate > 0.0) {
            return Err(UrpError::Config("base.epochs, base.batch_size and base.learning_rate must be positive".into()));
        }
        if self.eval.splits.is_empty() {
            return Err(UrpError::Config("eval.splits must be non-empty".into()));
        }
        Ok(())
    }

    /// The resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Hash of everything that determines a training trajectory. Run lengths,
    /// checkpoint cadence, evaluation settings and paths are excluded so a run
    /// can be extended by resuming with a larger step budget.
    pub fn training_hash(&self) -> String {
        let mut c = self.clone();
        c.grpo.max_steps = 0;
        c.grpo.checkpoint_every = 1;
        c.sft.epochs = 1;
        c.sft.checkpoint_every = 1;
        c.eval = EvalSection::default();
        c.paths = PathsSection::default();
        c.hash()
    }

    /// Applies a `--seed` override to every training seed.
    pub fn set_training_seed(&mut self, seed: u64) {
        self.base.seed = seed;
        self.grpo.seed = seed;
        self.sft.seed = seed;
    }

    /// Applies an `--indicators` override. Returns an error for an empty list.
    pub fn set_indicators(&mut self, indicators: Vec<Indicator>) -> Result<()> {
        if indicators.is_empty() {
            return Err(UrpError::Config("indicator subset must be non-empty".into()));
        }
        self.world.indicators = indicators;
        Ok(())
    }
}

pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
