//! Tabular Q-learning with an ε-greedy behavior policy.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HourlyRecord, TariffTiers};
use crate::env::{Action, EnvConfig, EnvError, EnvState, FarmEnv};

#[derive(Debug, thiserror::Error)]
pub enum QError {
    #[error("index out of range: state {state} (of {states}), action {action} (of {actions})")]
    IndexOutOfRange {
        state: usize,
        action: usize,
        states: usize,
        actions: usize,
    },
    #[error("Q-table CSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QParams {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    /// SOC fraction at the start of every training episode.
    pub initial_soc_frac: f64,
}

impl Default for QParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            discount: 0.89,
            epsilon_start: 1.0,
            epsilon_decay: 0.0001,
            initial_soc_frac: 0.5,
        }
    }
}

impl QParams {
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        (self.epsilon_start - self.epsilon_decay * episode as f64).max(0.0)
    }
}

/// Dense state × action table, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    fn check(&self, state: usize, action: usize) -> Result<usize, QError> {
        if state >= self.states || action >= self.actions {
            return Err(QError::IndexOutOfRange {
                state,
                action,
                states: self.states,
                actions: self.actions,
            });
        }
        Ok(state * self.actions + action)
    }

    pub fn get(&self, state: usize, action: usize) -> Result<f64, QError> {
        Ok(self.values[self.check(state, action)?])
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) -> Result<(), QError> {
        let i = self.check(state, action)?;
        self.values[i] = value;
        Ok(())
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    /// Argmax action, ties to the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Q(s,a) ← Q(s,a) + α·(r + γ·max_a' Q(s',a') − Q(s,a))`; no bootstrap when `next` is `None`.
pub fn q_update(
    table: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next: Option<usize>,
    alpha: f64,
    gamma: f64,
) -> Result<(), QError> {
    let current = table.get(state, action)?;
    let future = match next {
        Some(s) => {
            table.check(s, 0)?;
            gamma * table.max_value(s)
        }
        None => 0.0,
    };
    table.set(state, action, current + alpha * (reward + future - current))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularStep {
    pub reward: f64,
    pub next_state: usize,
    /// True terminal: no bootstrap from `next_state`.
    pub terminal: bool,
    /// Episode cut short; still bootstraps.
    pub truncated: bool,
}

/// A finite MDP driven by integer states and actions.
pub trait TabularMdp {
    fn states(&self) -> usize;
    fn actions(&self) -> usize;
    fn reset(&mut self) -> Result<usize, QError>;
    fn step(&mut self, action: usize) -> Result<TabularStep, QError>;
}

/// ε-greedy Q-learning; returns the table and the undiscounted reward of each episode.
pub fn train_tabular<M: TabularMdp, R: Rng + ?Sized>(
    mdp: &mut M,
    params: &QParams,
    episodes: usize,
    rng: &mut R,
) -> Result<(QTable, Vec<f64>), QError> {
    let mut table = QTable::new(mdp.states(), mdp.actions());
    let mut history = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let epsilon = params.epsilon_at(episode);
        let mut state = mdp.reset()?;
        let mut total = 0.0;
        loop {
            let action = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..table.actions())
            } else {
                table.greedy(state)
            };
            let step = mdp.step(action)?;
            total += step.reward;
            let next = (!step.terminal).then_some(step.next_state);
            q_update(
                &mut table,
                state,
                action,
                step.reward,
                next,
                params.learning_rate,
                params.discount,
            )?;
            if step.terminal || step.truncated {
                break;
            }
            state = step.next_state;
        }
        history.push(total);
    }
    Ok((table, history))
}

/// Discretized farm state: (hour, SOC bin, price tier, PV > 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FarmQState {
    pub hour: usize,
    pub soc_bin: usize,
    pub price_tier: usize,
    pub pv_flag: bool,
}

impl FarmQState {
    pub fn observe(state: &EnvState, record: &HourlyRecord, tiers: &TariffTiers) -> Self {
        Self {
            hour: state.hour,
            soc_bin: state.soc_bin,
            price_tier: tiers.tier_of(record.price).unwrap_or(0),
            pv_flag: state.pv_kwh > 0.0,
        }
    }

    pub fn index(&self, soc_bins: usize) -> usize {
        ((self.hour * soc_bins + self.soc_bin) * 3 + self.price_tier) * 2 + self.pv_flag as usize
    }

    pub fn from_index(index: usize, soc_bins: usize) -> Self {
        let pv_flag = index % 2 == 1;
        let rest = index / 2;
        let price_tier = rest % 3;
        let rest = rest / 3;
        Self {
            hour: rest / soc_bins,
            soc_bin: rest % soc_bins,
            price_tier,
            pv_flag,
        }
    }

    pub fn count(soc_bins: usize) -> usize {
        24 * soc_bins * 3 * 2
    }
}

/// The farm environment seen through the [`FarmQState`] discretization.
pub struct FarmMdp<'a> {
    window: &'a [HourlyRecord],
    config: &'a EnvConfig,
    tiers: TariffTiers,
    initial_soc_frac: f64,
    env: Option<FarmEnv<'a>>,
}

impl<'a> FarmMdp<'a> {
    pub fn new(
        window: &'a [HourlyRecord],
        config: &'a EnvConfig,
        tiers: TariffTiers,
        initial_soc_frac: f64,
    ) -> Self {
        Self {
            window,
            config,
            tiers,
            initial_soc_frac,
            env: None,
        }
    }

    fn index(&self, env: &FarmEnv<'_>) -> usize {
        FarmQState::observe(env.state(), env.record(), &self.tiers).index(self.config.soc_bins)
    }
}

impl TabularMdp for FarmMdp<'_> {
    fn states(&self) -> usize {
        FarmQState::count(self.config.soc_bins)
    }

    fn actions(&self) -> usize {
        Action::COUNT
    }

    fn reset(&mut self) -> Result<usize, QError> {
        let env = FarmEnv::new(self.window, self.initial_soc_frac, self.config)?;
        let s = self.index(&env);
        self.env = Some(env);
        Ok(s)
    }

    fn step(&mut self, action: usize) -> Result<TabularStep, QError> {
        let mut env = self.env.take().ok_or(EnvError::EpisodeDone)?;
        let out = env.step(Action::ALL[action])?;
        let next_state = if out.done { 0 } else { self.index(&env) };
        self.env = Some(env);
        Ok(TabularStep {
            reward: out.reward,
            next_state,
            terminal: out.done,
            truncated: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QOutcome {
    pub table: QTable,
    pub history: Vec<f64>,
}

/// Q-learning on the farm window, deterministic per seed.
pub fn train_q(
    window: &[HourlyRecord],
    config: &EnvConfig,
    tiers: TariffTiers,
    params: &QParams,
    episodes: usize,
    seed: u64,
) -> Result<QOutcome, QError> {
    let mut mdp = FarmMdp::new(window, config, tiers, params.initial_soc_frac);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (table, history) = train_tabular(&mut mdp, params, episodes, &mut rng)?;
    Ok(QOutcome { table, history })
}

/// Greedy farm action from a trained table.
pub fn q_policy(
    table: &QTable,
    state: &EnvState,
    record: &HourlyRecord,
    tiers: &TariffTiers,
    soc_bins: usize,
) -> Action {
    let s = FarmQState::observe(state, record, tiers).index(soc_bins);
    Action::ALL[table.greedy(s)]
}

pub const QTABLE_HEADER: &str = "hour,soc_bin,price_tier,pv_flag,action,q_value";

pub fn write_qtable_csv<W: Write>(
    table: &QTable,
    soc_bins: usize,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "{QTABLE_HEADER}")?;
    for s in 0..table.states() {
        let q = FarmQState::from_index(s, soc_bins);
        for (a, v) in table.row(s).iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                q.hour,
                q.soc_bin,
                q.price_tier,
                q.pv_flag as u8,
                Action::ALL[a],
                v
            )?;
        }
    }
    Ok(())
}

/// Parses a farm Q-table CSV. Missing rows stay zero.
pub fn read_qtable_csv<R: BufRead>(input: R, soc_bins: usize) -> Result<QTable, QError> {
    let mut table = QTable::new(FarmQState::count(soc_bins), Action::COUNT);
    let mut lines = input.lines();
    let err = |line: usize, msg: &str| QError::Parse {
        line,
        msg: msg.to_string(),
    };
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != QTABLE_HEADER {
        return Err(err(1, "missing header"));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        let ln = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(err(ln, "expected 6 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(ln, "bad integer"));
        let q = FarmQState {
            hour: int(f[0])?,
            soc_bin: int(f[1])?,
            price_tier: int(f[2])?,
            pv_flag: int(f[3])? == 1,
        };
        if q.hour >= 24 || q.soc_bin >= soc_bins || q.price_tier >= 3 {
            return Err(err(ln, "state out of range"));
        }
        let action: Action = f[4].parse().map_err(|e: String| err(ln, &e))?;
        let value: f64 = f[5].parse().map_err(|_| err(ln, "bad q_value"))?;
        table.set(q.index(soc_bins), action.index(), value)?;
    }
    Ok(table)
}
