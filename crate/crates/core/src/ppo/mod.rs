//! Actor-critic PPO with a clipped surrogate objective.
//!
//! The behavior policy mixes the actor's softmax with a uniform distribution,
//! `ε/3 + (1 − ε)·softmax(logits)`, and every importance ratio is taken
//! against that mixture so the ratio stays 1 at collection time.

mod gae;
mod train;
mod update;

pub use gae::{compute_gae, standardize};
pub use train::{train, train_with, write_history_csv, EpisodeLog, TrainOutcome};
pub use update::{clipped_surrogate, clipped_surrogate_from_ratio, ppo_update, UpdateStats};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, OBSERVATION_SIZE};
use crate::nn::{self, checkpoint, Activation, AdamConfig, AdamState, Mlp, NnError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error(
        "non-finite loss at episode {episode}: surrogate {surrogate}, value loss {value_loss}"
    )]
    NonFiniteLoss {
        episode: usize,
        surrogate: f64,
        value_loss: f64,
    },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}

impl PpoError {
    /// True when training blew up numerically rather than being misconfigured.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            PpoError::NonFiniteLoss { .. } | PpoError::Nn(NnError::NonFiniteGradient)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyperparams {
    pub learning_rate: f64,
    pub discount: f64,
    pub clip: f64,
    pub epsilon_start: f64,
    /// Subtracted from ε once per episode.
    pub epsilon_decay: f64,
    pub minibatch: usize,
    pub epochs_per_iteration: usize,
    pub gae_lambda: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub rollout_horizon: usize,
    pub max_grad_norm: f64,
    /// Hidden layer widths shared by actor and critic.
    pub hidden: Vec<usize>,
    /// SOC fraction at the start of every training episode.
    pub initial_soc_frac: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            discount: 0.89,
            clip: 0.2,
            epsilon_start: 1.0,
            epsilon_decay: 0.0001,
            minibatch: 64,
            epochs_per_iteration: 4,
            gae_lambda: 0.95,
            value_coeff: 0.5,
            entropy_coeff: 0.01,
            rollout_horizon: 720,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            initial_soc_frac: 0.5,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidHyperparams(m.to_string()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(self.epsilon_decay >= 0.0) {
            return bad("epsilon_start must be in [0, 1] and epsilon_decay non-negative");
        }
        if self.minibatch == 0 || self.minibatch > self.rollout_horizon {
            return bad("minibatch must be in 1..=rollout_horizon");
        }
        if self.epochs_per_iteration == 0 || self.rollout_horizon == 0 {
            return bad("epochs and rollout horizon must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    /// Exploration rate for 0-based episode `episode`.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        (self.epsilon_start - self.epsilon_decay * episode as f64).max(0.0)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Actor, critic and their optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(hp: &PpoHyperparams, rng: &mut R) -> Self {
        let sizes = |out: usize| {
            std::iter::once(OBSERVATION_SIZE)
                .chain(hp.hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };
        let actor = Mlp::new(&sizes(Action::COUNT), Activation::Tanh, rng);
        let critic = Mlp::new(&sizes(1), Activation::Tanh, rng);
        Self::from_networks(actor, critic, hp)
    }

    pub fn seeded(hp: &PpoHyperparams, seed: u64) -> Self {
        Self::new(hp, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_networks(actor: Mlp, critic: Mlp, hp: &PpoHyperparams) -> Self {
        let actor_opt = AdamState::new(&actor, hp.adam());
        let critic_opt = AdamState::new(&critic, hp.adam());
        Self {
            actor,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    pub fn checkpoint(&self) -> String {
        checkpoint::encode(&[("actor", &self.actor), ("critic", &self.critic)])
    }

    /// Restores actor and critic; optimizer moments start fresh.
    pub fn from_checkpoint(
        text: &str,
        hp: &PpoHyperparams,
    ) -> Result<Self, checkpoint::CheckpointError> {
        let mut nets = checkpoint::decode(text)?;
        let actor = checkpoint::take(&mut nets, "actor")?;
        let critic = checkpoint::take(&mut nets, "critic")?;
        Ok(Self::from_networks(actor, critic, hp))
    }
}

/// `ε·Uniform(3) + (1 − ε)·policy`.
pub fn mixture(policy: &[f64; 3], epsilon: f64) -> [f64; 3] {
    let uniform = epsilon / 3.0;
    policy.map(|p| uniform + (1.0 - epsilon) * p)
}

pub(crate) fn safe_ln(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Index drawn from `probs` with one uniform draw from `rng`.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(2)
}

/// Samples the behavior policy; returns the action and its log-probability under the mixture.
pub fn act<R: Rng + ?Sized>(
    actor: &Mlp,
    observation: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<(Action, f64), NnError> {
    let logits = actor.forward(observation)?;
    let policy = nn::softmax_logits_to_distribution(&[logits[0], logits[1], logits[2]]);
    let mix = mixture(&policy, epsilon);
    let i = sample_index(&mix, rng);
    Ok((Action::ALL[i], safe_ln(mix[i])))
}

/// Greedy action: argmax of the policy probabilities, ties to the lowest index.
pub fn greedy_action(actor: &Mlp, observation: &[f64]) -> Result<Action, NnError> {
    let logits = actor.forward(observation)?;
    let probs = nn::softmax(&logits);
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Ok(Action::ALL[best])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub observation: [f64; OBSERVATION_SIZE],
    pub action: Action,
    pub behavior_log_prob: f64,
    pub reward: f64,
    pub value_estimate: f64,
    pub done: bool,
}

/// One rollout with its advantages (standardized) and returns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Exploration rate of the behavior policy that produced the rollout.
    pub epsilon: f64,
}

impl TrajectoryBatch {
    /// GAE over the rollout, then standardized advantages. Returns stay unstandardized.
    pub fn from_rollout(
        transitions: Vec<Transition>,
        bootstrap_value: f64,
        epsilon: f64,
        hp: &PpoHyperparams,
    ) -> Result<Self, PpoError> {
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = transitions.iter().map(|t| t.value_estimate).collect();
        let dones: Vec<bool> = transitions.iter().map(|t| t.done).collect();
        let (mut advantages, returns) = compute_gae(
            &rewards,
            &values,
            &dones,
            bootstrap_value,
            hp.discount,
            hp.gae_lambda,
        )?;
        standardize(&mut advantages);
        Ok(Self {
            transitions,
            advantages,
            returns,
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}
