use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{QParams, RuleConfig};
use crate::data::{self, DataError, SyntheticConfig, YearSeries};
use crate::env::EnvConfig;
use crate::ppo::PpoHyperparams;

pub const SEED_ENV_VAR: &str = "POWERWALL_RL_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{SEED_ENV_VAR} must be an unsigned integer, got `{0}`")]
    BadSeedOverride(String),
}

/// Where the hourly series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_data_seed")]
        seed: u64,
        #[serde(default)]
        generator: SyntheticConfig,
    },
    Csv {
        path: PathBuf,
        /// Nameplate PV capacity; defaults to the largest observed hourly PV.
        #[serde(default)]
        pv_capacity_kw: Option<f64>,
    },
}

fn default_data_seed() -> u64 {
    42
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: default_data_seed(),
            generator: SyntheticConfig::default(),
        }
    }
}

impl DataSource {
    /// Loads or generates the series. Relative CSV paths resolve against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<YearSeries, DataError> {
        match self {
            DataSource::Synthetic { seed, generator } => data::generate_synthetic(*seed, generator),
            DataSource::Csv {
                path,
                pv_capacity_kw,
            } => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                data::load_csv_with_capacity(path, *pv_capacity_kw)
            }
        }
    }
}

/// Full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run `r` uses seed `base_seed + r` for both learners.
    pub base_seed: u64,
    pub runs: usize,
    pub ppo_episodes: usize,
    pub qlearn_episodes: usize,
    pub output_dir: PathBuf,
    /// SOC fraction at the start of the February–December evaluation.
    pub eval_initial_soc_frac: f64,
    pub data: DataSource,
    pub env: EnvConfig,
    pub ppo: PpoHyperparams,
    pub qlearn: QParams,
    pub rule: RuleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 42,
            runs: 10,
            ppo_episodes: 20_000,
            qlearn_episodes: 50_000,
            output_dir: PathBuf::from("results"),
            eval_initial_soc_frac: 0.5,
            data: DataSource::default(),
            env: EnvConfig::default(),
            ppo: PpoHyperparams::default(),
            qlearn: QParams::default(),
            rule: RuleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed environment override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV_VAR).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(raw) = value {
            self.base_seed = raw
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadSeedOverride(raw.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.runs == 0 {
            return invalid("runs must be at least 1".into());
        }
        if self.ppo_episodes == 0 || self.qlearn_episodes == 0 {
            return invalid("episode counts must be at least 1".into());
        }
        if let Err(e) = self.env.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.ppo.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.rule.validate() {
            return invalid(e);
        }
        let band = self.env.soc_min_frac..=self.env.soc_max_frac;
        for (name, v) in [
            ("eval_initial_soc_frac", self.eval_initial_soc_frac),
            ("ppo.initial_soc_frac", self.ppo.initial_soc_frac),
            ("qlearn.initial_soc_frac", self.qlearn.initial_soc_frac),
        ] {
            if !band.contains(&v) {
                return invalid(format!("{name} = {v} lies outside the SOC band"));
            }
        }
        Ok(())
    }
}
