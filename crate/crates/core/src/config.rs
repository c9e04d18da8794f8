//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid config. Unknown
//! keys are rejected with the offending key named.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::NetworkSizes;
use crate::algo::AlgoConfig;
use crate::envs::{DomainRandomization, EnvConfig, EnvSettings, RewardConfig, TerrainKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_envs: usize,
    pub episodes: usize,
    /// episode length used by the evaluation suites; 0 keeps `env.episode_steps`
    pub episode_steps: usize,
    /// push magnitude, m/s; defaults to half the maximum command
    pub push_delta: Option<f64>,
    pub n_trials: usize,
    pub n_samples: usize,
    pub seeds: usize,
    pub terrain_kinds: Vec<TerrainKind>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_envs: 16,
            episodes: 2,
            episode_steps: 0,
            push_delta: None,
            n_trials: 64,
            n_samples: 1000,
            seeds: 3,
            terrain_kinds: vec![TerrainKind::Flat, TerrainKind::Slope, TerrainKind::RoughSlope, TerrainKind::Stairs],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub n_envs: usize,
    /// history length H
    pub history: usize,
    pub latent_dim: usize,
    /// rayon worker threads; 0 uses the rayon default
    pub workers: usize,
    pub out_dir: PathBuf,
    /// iterations between periodic checkpoints; 0 disables them
    pub checkpoint_interval: usize,
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    /// omitted: the robot profile's defaults
    pub reward: Option<RewardConfig>,
    pub randomization: DomainRandomization,
    pub networks: NetworkSizes,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 1000,
            n_envs: 256,
            history: 5,
            latent_dim: 32,
            workers: 0,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 100,
            env: EnvConfig::default(),
            algo: AlgoConfig::default(),
            reward: None,
            randomization: DomainRandomization::default(),
            networks: NetworkSizes::default(),
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
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 {
            return Err(Error::Config("n_envs: must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim: must be >= 1".into()));
        }
        self.algo.validate()?;
        self.settings().validate()
    }

    pub fn reward_config(&self) -> RewardConfig {
        self.reward.clone().unwrap_or_else(|| RewardConfig::for_robot(self.env.robot))
    }

    pub fn settings(&self) -> EnvSettings {
        EnvSettings {
            env: self.env.clone(),
            reward: self.reward_config(),
            randomization: self.randomization.clone(),
            history: self.history,
        }
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }
}
