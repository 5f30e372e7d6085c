//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use powerwall_rl::baselines::{QError, TabularMdp, TabularStep};
use powerwall_rl::env::{Action, EnvConfig, EnvState, StepResult};
use powerwall_rl::nn::{Activation, ForwardCache, Mlp};
use powerwall_rl::HourlyRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- networks

/// Random tanh MLP, input and loss coefficients for gradient checks.
pub struct GradCase {
    pub net: Mlp,
    pub input: Vec<f64>,
    pub coeffs: Vec<f64>,
}

pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=3);
    let mut sizes = vec![rng.gen_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.gen_range(1..=8));
    }
    sizes.push(rng.gen_range(1..=4));
    let mut net = Mlp::new(&sizes, Activation::Tanh, &mut rng);
    for l in net.layers_mut() {
        for b in &mut l.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let input = (0..sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let coeffs = (0..net.output_size())
        .map(|_| rng.gen_range(-1.5..1.5))
        .collect();
    GradCase { net, input, coeffs }
}

/// `L(y) = Σ c_k y_k + ½ Σ y_k²`.
pub fn grad_case_loss(net: &Mlp, input: &[f64], coeffs: &[f64]) -> f64 {
    let y = net.forward(input).unwrap();
    y.iter().zip(coeffs).map(|(y, c)| c * y + 0.5 * y * y).sum()
}

/// Largest per-parameter relative error between backprop and central differences.
///
/// Relative error is `|a − f| / max(|a|, |f|, floor)`; the floor only matters
/// for parameters whose true gradient is essentially zero.
pub fn max_gradient_error(case: &GradCase, h: f64, floor: f64) -> f64 {
    let net = &case.net;
    let mut cache = ForwardCache::new();
    net.forward_cached(&case.input, &mut cache).unwrap();
    let out_grad: Vec<f64> = cache
        .output()
        .iter()
        .zip(&case.coeffs)
        .map(|(y, c)| c + y)
        .collect();
    let mut grads = net.zero_gradients();
    net.backward(&cache, &out_grad, &mut grads).unwrap();
    let analytic: Vec<f64> = grads.values().collect();

    let params = net.parameters();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_parameters(&p).unwrap();
        let up = grad_case_loss(&probe, &case.input, &case.coeffs);
        p[i] = params[i] - h;
        probe.set_parameters(&p).unwrap();
        let down = grad_case_loss(&probe, &case.input, &case.coeffs);
        let fd = (up - down) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Forward pass written directly from the layer tensors.
pub fn naive_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in net.layers() {
        let mut y = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let mut s = layer.biases[o];
            for (i, xi) in x.iter().enumerate() {
                s += layer.weights[o * layer.inputs + i] * xi;
            }
            y.push(match layer.activation {
                Activation::Tanh => s.tanh(),
                Activation::Identity => s,
            });
        }
        x = y;
    }
    x
}

// ---------------------------------------------------------------- GAE

/// Â_t as an explicit sum of discounted TD residuals, stopping at the first terminal.
pub fn gae_direct(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let value_after = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                let live = if dones[k] { 0.0 } else { 1.0 };
                let delta = rewards[k] + gamma * live * value_after(k) - values[k];
                total += weight * delta;
                if dones[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

// ---------------------------------------------------------------- chain MDP

/// Three states in a row. Action 1 moves right and pays 1 when leaving the
/// last state (terminal); action 0 returns to state 0 and pays 0.05.
/// Episodes are also cut after `horizon` steps.
pub struct ChainMdp {
    pub state: usize,
    pub steps: usize,
    pub horizon: usize,
}

impl ChainMdp {
    pub fn new() -> Self {
        Self {
            state: 0,
            steps: 0,
            horizon: 50,
        }
    }

    /// `(reward, next_state, terminal)` for a deterministic transition.
    pub fn transition(state: usize, action: usize) -> (f64, usize, bool) {
        match (state, action) {
            (_, 0) => (0.05, 0, false),
            (2, 1) => (1.0, 0, true),
            (s, 1) => (0.0, s + 1, false),
            _ => unreachable!("two actions"),
        }
    }
}

impl TabularMdp for ChainMdp {
    fn states(&self) -> usize {
        3
    }

    fn actions(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Result<usize, QError> {
        self.state = 0;
        self.steps = 0;
        Ok(0)
    }

    fn step(&mut self, action: usize) -> Result<TabularStep, QError> {
        let (reward, next, terminal) = Self::transition(self.state, action);
        self.state = next;
        self.steps += 1;
        Ok(TabularStep {
            reward,
            next_state: next,
            terminal,
            truncated: self.steps >= self.horizon,
        })
    }
}

/// Optimal Q-values of [`ChainMdp`] by value iteration to a fixed point.
pub fn chain_value_iteration(gamma: f64) -> [[f64; 2]; 3] {
    let mut q = [[0.0f64; 2]; 3];
    for _ in 0..10_000 {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (r, s2, terminal) = ChainMdp::transition(s, a);
                let future = if terminal {
                    0.0
                } else {
                    q[s2][0].max(q[s2][1])
                };
                *v = r + gamma * future;
            }
        }
        if next == q {
            break;
        }
        q = next;
    }
    q
}

// ---------------------------------------------------------------- environment

pub const TOL: f64 = 1e-9;

/// Checks every step invariant; returns a description of the first violation.
pub fn check_step_invariants(
    state: &EnvState,
    action: Action,
    record: &HourlyRecord,
    cfg: &EnvConfig,
    out: &StepResult,
) -> Result<(), String> {
    let (min, max) = (cfg.soc_min_kwh(), cfg.soc_max_kwh());
    let soc = state.soc_kwh;
    let next = out.next_state.soc_kwh;

    if out.grid_import_kwh < 0.0 {
        return Err(format!("negative import {}", out.grid_import_kwh));
    }
    let expect_penalty = match action {
        Action::Charge => soc >= max,
        Action::Discharge => soc <= min,
        Action::Idle => false,
    };
    if out.penalty_applied != expect_penalty {
        return Err(format!(
            "penalty {} but expected {expect_penalty}",
            out.penalty_applied
        ));
    }
    let penalty = if expect_penalty {
        cfg.penalty_value
    } else {
        0.0
    };
    let reward = -out.grid_import_kwh * record.price - penalty;
    if out.reward != reward {
        return Err(format!("reward {} but identity gives {reward}", out.reward));
    }
    // Battery bookkeeping.
    let delta = next - soc;
    if (delta - out.battery_delta_kwh).abs() > TOL {
        return Err(format!(
            "soc moved {delta} but reported {}",
            out.battery_delta_kwh
        ));
    }
    if delta.abs() > cfg.rate_kw + TOL {
        return Err(format!("soc moved {delta}, above the rate limit"));
    }
    // Grid + PV + discharge covers load + charge; any excess is curtailed PV.
    let charge = delta.max(0.0);
    let discharge = (-delta).max(0.0);
    let supply = out.grid_import_kwh + record.pv_kwh + discharge;
    let demand = record.load_kwh + charge;
    if supply < demand - TOL {
        return Err(format!("supply {supply} short of demand {demand}"));
    }
    let expected_import = (demand - record.pv_kwh - discharge).max(0.0);
    if (out.grid_import_kwh - expected_import).abs() > TOL {
        return Err(format!(
            "import {} but the energy balance needs {expected_import}",
            out.grid_import_kwh
        ));
    }
    // Band containment: an in-band state stays in band, and nothing leaves [0, capacity].
    let in_band = soc >= min - TOL && soc <= max + TOL;
    if in_band && (next < min - TOL || next > max + TOL) {
        return Err(format!("soc {soc} -> {next} left the band"));
    }
    if next < -TOL || next > cfg.capacity_kwh + TOL {
        return Err(format!("soc {next} outside [0, capacity]"));
    }
    if expect_penalty && delta != 0.0 {
        return Err("penalized action moved the battery".into());
    }
    if out.next_state.hour != (state.hour + 1) % 24 {
        return Err("hour did not advance".into());
    }
    Ok(())
}
