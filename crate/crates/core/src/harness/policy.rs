//! Loading a policy named on the command line.

use std::path::Path;

use super::evaluate::{ActorPolicy, IdlePolicy, Policy, QPolicy, RulePolicy};
use crate::baselines::{read_qtable_csv, QTable, RuleConfig, QTABLE_HEADER};
use crate::nn::checkpoint::{self, MAGIC};
use crate::nn::Mlp;

#[derive(Debug, thiserror::Error)]
pub enum PolicyLoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}: not a PPO checkpoint or Q-table CSV")]
    UnknownFormat(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    QTable(#[from] crate::baselines::QError),
}

/// A policy restored from disk, or one of the built-in baselines.
#[derive(Debug, Clone)]
pub enum LoadedPolicy {
    Ppo(Mlp),
    Q(QTable),
    Rule(RuleConfig),
    Idle,
}

impl LoadedPolicy {
    /// `spec` is `rule`, `idle`, or a path to a PPO checkpoint or Q-table CSV.
    pub fn load(spec: &str, rule: &RuleConfig, soc_bins: usize) -> Result<Self, PolicyLoadError> {
        match spec {
            "rule" => return Ok(LoadedPolicy::Rule(rule.clone())),
            "idle" | "no-battery" | "no_battery" => return Ok(LoadedPolicy::Idle),
            _ => {}
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|source| PolicyLoadError::Io {
            path: spec.to_string(),
            source,
        })?;
        if text.starts_with(MAGIC) {
            let mut nets = checkpoint::decode(&text)?;
            Ok(LoadedPolicy::Ppo(checkpoint::take(&mut nets, "actor")?))
        } else if text.starts_with(QTABLE_HEADER) {
            Ok(LoadedPolicy::Q(read_qtable_csv(text.as_bytes(), soc_bins)?))
        } else {
            Err(PolicyLoadError::UnknownFormat(spec.to_string()))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LoadedPolicy::Ppo(_) => "ppo",
            LoadedPolicy::Q(_) => "qlearn",
            LoadedPolicy::Rule(_) => "rule",
            LoadedPolicy::Idle => "no_battery",
        }
    }

    pub fn as_policy(&self) -> Box<dyn Policy + '_> {
        match self {
            LoadedPolicy::Ppo(actor) => Box::new(ActorPolicy(actor)),
            LoadedPolicy::Q(table) => Box::new(QPolicy(table)),
            LoadedPolicy::Rule(r) => Box::new(RulePolicy(r.clone())),
            LoadedPolicy::Idle => Box::new(IdlePolicy),
        }
    }
}
