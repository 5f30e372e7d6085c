use rand::seq::SliceRandom;
use rand::Rng;

use super::{mixture, safe_ln, PpoAgent, PpoError, PpoHyperparams, TrajectoryBatch};
use crate::nn::{self, ForwardCache};

/// `min(r·Â, clip(r, 1 − δ, 1 + δ)·Â)` for a given probability ratio `r`.
pub fn clipped_surrogate_from_ratio(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// Per-sample clipped surrogate with `r = exp(new_log_prob − old_log_prob)`.
pub fn clipped_surrogate(new_log_prob: f64, old_log_prob: f64, advantage: f64, clip: f64) -> f64 {
    clipped_surrogate_from_ratio((new_log_prob - old_log_prob).exp(), advantage, clip)
}

/// d(surrogate)/d(new_log_prob). Zero when the clipped branch is strictly smaller.
fn surrogate_log_prob_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Averages over every sample evaluated during the update, measured before each minibatch step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// Several epochs of shuffled minibatch updates on actor (clipped surrogate
/// plus entropy bonus) and critic (squared error to the returns).
pub fn ppo_update<R: Rng + ?Sized>(
    agent: &mut PpoAgent,
    batch: &TrajectoryBatch,
    hp: &PpoHyperparams,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    ppo_update_at(agent, batch, hp, rng, 0)
}

pub(super) fn ppo_update_at<R: Rng + ?Sized>(
    agent: &mut PpoAgent,
    batch: &TrajectoryBatch,
    hp: &PpoHyperparams,
    rng: &mut R,
    episode: usize,
) -> Result<UpdateStats, PpoError> {
    let n = batch.len();
    if n == 0 {
        return Err(PpoError::EmptyBatch);
    }
    if batch.advantages.len() != n || batch.returns.len() != n {
        return Err(PpoError::LengthMismatch(format!(
            "{} transitions, {} advantages, {} returns",
            n,
            batch.advantages.len(),
            batch.returns.len()
        )));
    }

    let eps = batch.epsilon;
    let mut order: Vec<usize> = (0..n).collect();
    let mut actor_grads = agent.actor.zero_gradients();
    let mut critic_grads = agent.critic.zero_gradients();
    let mut actor_cache = ForwardCache::new();
    let mut critic_cache = ForwardCache::new();

    let mut totals = UpdateStats::default();
    let mut evaluated = 0usize;

    for _ in 0..hp.epochs_per_iteration {
        order.shuffle(rng);
        for chunk in order.chunks(hp.minibatch) {
            actor_grads.zero();
            critic_grads.zero();
            let scale = 1.0 / chunk.len() as f64;
            let mut surrogate_sum = 0.0;
            let mut value_sum = 0.0;

            for &i in chunk {
                let tr = &batch.transitions[i];
                let advantage = batch.advantages[i];
                let a = tr.action.index();

                agent
                    .actor
                    .forward_cached(&tr.observation, &mut actor_cache)?;
                let logits = actor_cache.output();
                let policy = nn::softmax_logits_to_distribution(&[logits[0], logits[1], logits[2]]);
                let mix = mixture(&policy, eps);
                let new_log_prob = safe_ln(mix[a]);
                let ratio = (new_log_prob - tr.behavior_log_prob).exp();

                surrogate_sum += clipped_surrogate_from_ratio(ratio, advantage, hp.clip);
                if (ratio - 1.0).abs() > hp.clip {
                    totals.clip_fraction += 1.0;
                }
                let entropy: f64 = -policy
                    .iter()
                    .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
                    .sum::<f64>();
                totals.entropy += entropy;

                // loss = -mean(surrogate) - c_H * mean(entropy)
                let d_log_prob = -scale * surrogate_log_prob_grad(ratio, advantage, hp.clip);
                let mix_a = mix[a].max(f64::MIN_POSITIVE);
                let mut d_logits = [0.0; 3];
                for (k, dz) in d_logits.iter_mut().enumerate() {
                    let indicator = if k == a { 1.0 } else { 0.0 };
                    let d_mix_log = (1.0 - eps) * policy[a] * (indicator - policy[k]) / mix_a;
                    let plogp = if policy[k] > 0.0 { policy[k].ln() } else { 0.0 };
                    let d_entropy = -policy[k] * (plogp + entropy);
                    *dz = d_log_prob * d_mix_log - hp.entropy_coeff * scale * d_entropy;
                }
                agent
                    .actor
                    .backward(&actor_cache, &d_logits, &mut actor_grads)?;

                agent
                    .critic
                    .forward_cached(&tr.observation, &mut critic_cache)?;
                let err = critic_cache.output()[0] - batch.returns[i];
                value_sum += err * err;
                let d_value = 2.0 * hp.value_coeff * scale * err;
                agent
                    .critic
                    .backward(&critic_cache, &[d_value], &mut critic_grads)?;
            }

            if !surrogate_sum.is_finite() || !value_sum.is_finite() {
                return Err(PpoError::NonFiniteLoss {
                    episode,
                    surrogate: surrogate_sum * scale,
                    value_loss: value_sum * scale,
                });
            }
            totals.surrogate += surrogate_sum;
            totals.value_loss += value_sum;
            evaluated += chunk.len();

            actor_grads.clip_norm(hp.max_grad_norm);
            critic_grads.clip_norm(hp.max_grad_norm);
            agent.actor_opt.step(&mut agent.actor, &actor_grads)?;
            agent.critic_opt.step(&mut agent.critic, &critic_grads)?;
        }
    }

    let denom = evaluated as f64;
    Ok(UpdateStats {
        surrogate: totals.surrogate / denom,
        value_loss: totals.value_loss / denom,
        clip_fraction: totals.clip_fraction / denom,
        entropy: totals.entropy / denom,
    })
}
