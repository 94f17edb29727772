//! Experiment configuration: one structured text file drives every
//! subcommand; CLI flags override individual fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::data::SyntheticSpec;
use crate::env::EnvConfig;
use crate::error::{Result, SimError};
use crate::model::UserModelConfig;

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> String {
    "runs/exp".to_string()
}

/// Which dataset the pipeline runs on: a manifest written by `ingest` or
/// `synth`, or an inline synthetic spec generated on the fly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataConfig {
    pub manifest: Option<String>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fractions: vec![0.8, 0.1, 0.1], seed: 13 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Maximum number of held-out sessions rolled out per policy.
    pub episodes: usize,
    pub bootstrap_samples: usize,
    pub level: f64,
    pub bins: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 500, bootstrap_samples: 2000, level: 0.95, bins: 30, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default = "UserModelConfig::cwm_default")]
    pub cwm: UserModelConfig,
    #[serde(default = "UserModelConfig::swm_default")]
    pub swm: UserModelConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            output_dir: default_output_dir(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            env: EnvConfig::default(),
            cwm: UserModelConfig::cwm_default(),
            swm: UserModelConfig::swm_default(),
            agent: AgentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: Self =
            toml::from_str(&raw).map_err(|e| SimError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string(self).map_err(|e| SimError::Config(format!("encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
        }
        if !(0.0..1.0).contains(&self.eval.level) {
            return Err(SimError::Config(format!(
                "eval level {} outside (0, 1)",
                self.eval.level
            )));
        }
        Ok(())
    }
}
