use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::update::ppo_update_at;
use super::{act, PpoAgent, PpoError, PpoHyperparams, TrajectoryBatch, Transition};
use crate::data::HourlyRecord;
use crate::env::{EnvConfig, FarmEnv};
use crate::nn::ForwardCache;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub agent: PpoAgent,
    pub history: Vec<EpisodeLog>,
}

/// Trains from scratch on `window`: one rollout and one PPO update per episode.
pub fn train(
    window: &[HourlyRecord],
    env_config: &EnvConfig,
    hp: &PpoHyperparams,
    total_episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, PpoError> {
    train_with(window, env_config, hp, total_episodes, seed, &mut |_| {})
}

/// [`train`] with a callback after every episode.
pub fn train_with(
    window: &[HourlyRecord],
    env_config: &EnvConfig,
    hp: &PpoHyperparams,
    total_episodes: usize,
    seed: u64,
    observer: &mut dyn FnMut(&EpisodeLog),
) -> Result<TrainOutcome, PpoError> {
    hp.validate()?;
    env_config.validate()?;
    if total_episodes == 0 {
        return Err(PpoError::InvalidHyperparams(
            "total_episodes must be at least 1".into(),
        ));
    }
    let horizon = hp.rollout_horizon.min(window.len());
    let window = &window[..horizon];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = PpoAgent::new(hp, &mut rng);
    let mut history = Vec::with_capacity(total_episodes);
    let mut critic_cache = ForwardCache::new();

    for episode in 0..total_episodes {
        let epsilon = hp.epsilon_at(episode);
        let mut env = FarmEnv::new(window, hp.initial_soc_frac, env_config)?;
        let mut transitions = Vec::with_capacity(horizon);
        let mut episode_reward = 0.0;
        while !env.is_done() {
            let observation = env.observation();
            let (action, log_prob) = act(&agent.actor, &observation, epsilon, &mut rng)?;
            agent
                .critic
                .forward_cached(&observation, &mut critic_cache)?;
            let value = critic_cache.output()[0];
            let out = env.step(action)?;
            episode_reward += out.reward;
            transitions.push(Transition {
                observation,
                action,
                behavior_log_prob: log_prob,
                reward: out.reward,
                value_estimate: value,
                done: out.done,
            });
        }

        let batch = TrajectoryBatch::from_rollout(transitions, 0.0, epsilon, hp)?;
        let stats = ppo_update_at(&mut agent, &batch, hp, &mut rng, episode)?;
        let log = EpisodeLog {
            episode,
            reward: episode_reward,
            epsilon,
            clip_fraction: stats.clip_fraction,
        };
        observer(&log);
        history.push(log);
    }
    Ok(TrainOutcome { agent, history })
}

pub fn write_history_csv<W: Write>(history: &[EpisodeLog], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "episode,reward,epsilon,clip_fraction")?;
    for h in history {
        writeln!(
            out,
            "{},{},{},{}",
            h.episode, h.reward, h.epsilon, h.clip_fraction
        )?;
    }
    Ok(())
}
