//! Hourly battery-dispatch MDP for a PV-equipped dairy farm.
//!
//! Observation is (hour of day, SOC bin, load, PV). Actions are charge,
//! discharge or idle at the battery's rated power for one hour. The reward is
//! the negative cost of grid import, minus a fixed penalty for trying to
//! charge a full battery or discharge an empty one (relative to the SOC band).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::HOURS_PER_DAY;
use crate::data::HourlyRecord;

/// Slack for float comparisons on stored energy.
pub const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("episode window is empty")]
    EmptyWindow,
    #[error("initial SOC fraction {value} outside the band [{min}, {max}]")]
    SocOutOfRange { value: f64, min: f64, max: f64 },
    #[error("SOC {soc_kwh} kWh outside [0, {capacity_kwh}] kWh")]
    OutOfRange { soc_kwh: f64, capacity_kwh: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("step called after the episode finished")]
    EpisodeDone,
}

/// Battery physics and penalty constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub capacity_kwh: f64,
    /// Charge/discharge power; energy per one-hour step.
    pub rate_kw: f64,
    pub soc_min_frac: f64,
    pub soc_max_frac: f64,
    /// Magnitude subtracted from the reward for a band-violating action.
    pub penalty_value: f64,
    /// Number of observed SOC levels (11 gives bins 0..=10).
    pub soc_bins: usize,
    /// Load value mapped to 1.0 in the network observation.
    pub load_norm_kwh: f64,
    /// PV value mapped to 1.0 in the network observation.
    pub pv_norm_kwh: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            capacity_kwh: 13.5,
            rate_kw: 5.0,
            soc_min_frac: 0.15,
            soc_max_frac: 0.85,
            penalty_value: 15.0,
            soc_bins: 11,
            load_norm_kwh: 100.0,
            pv_norm_kwh: 20.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.capacity_kwh > 0.0 && self.capacity_kwh.is_finite()) {
            return bad("capacity_kwh must be positive");
        }
        if !(self.rate_kw > 0.0 && self.rate_kw.is_finite()) {
            return bad("rate_kw must be positive");
        }
        if !(0.0 <= self.soc_min_frac
            && self.soc_min_frac < self.soc_max_frac
            && self.soc_max_frac <= 1.0)
        {
            return bad("need 0 <= soc_min_frac < soc_max_frac <= 1");
        }
        if !(self.penalty_value >= 0.0) {
            return bad("penalty_value must be non-negative");
        }
        if self.soc_bins < 2 {
            return bad("soc_bins must be at least 2");
        }
        if !(self.load_norm_kwh > 0.0 && self.pv_norm_kwh > 0.0) {
            return bad("normalization maxima must be positive");
        }
        Ok(())
    }

    pub fn soc_min_kwh(&self) -> f64 {
        self.soc_min_frac * self.capacity_kwh
    }

    pub fn soc_max_kwh(&self) -> f64 {
        self.soc_max_frac * self.capacity_kwh
    }

    pub fn bin(&self, soc_kwh: f64) -> Result<usize, EnvError> {
        soc_to_bin_with(soc_kwh, self.capacity_kwh, self.soc_bins)
    }
}

/// Discrete battery command. Index order (Charge < Discharge < Idle) is the greedy tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Charge,
    Discharge,
    Idle,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Charge, Action::Discharge, Action::Idle];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Charge => "charge",
            Action::Discharge => "discharge",
            Action::Idle => "idle",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "charge" => Ok(Action::Charge),
            "discharge" => Ok(Action::Discharge),
            "idle" => Ok(Action::Idle),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// MDP state. `soc_kwh` is internal; the agent observes `soc_bin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub hour: usize,
    pub soc_kwh: f64,
    pub soc_bin: usize,
    pub load_kwh: f64,
    pub pv_kwh: f64,
}

impl EnvState {
    pub fn new(record: &HourlyRecord, soc_kwh: f64, config: &EnvConfig) -> Result<Self, EnvError> {
        Ok(Self {
            hour: record.hour_of_day(),
            soc_kwh,
            soc_bin: config.bin(soc_kwh)?,
            load_kwh: record.load_kwh,
            pv_kwh: record.pv_kwh,
        })
    }

    pub fn validate(&self, config: &EnvConfig) -> Result<(), EnvError> {
        let invalid = |m: String| Err(EnvError::InvalidState(m));
        if self.hour >= HOURS_PER_DAY {
            return invalid(format!("hour {} outside 0..24", self.hour));
        }
        if !self.soc_kwh.is_finite()
            || self.soc_kwh < -ENERGY_TOL
            || self.soc_kwh > config.capacity_kwh + ENERGY_TOL
        {
            return invalid(format!("soc_kwh {} outside [0, capacity]", self.soc_kwh));
        }
        let expected = config.bin(self.soc_kwh.clamp(0.0, config.capacity_kwh))?;
        if self.soc_bin != expected {
            return invalid(format!(
                "soc_bin {} does not match soc_kwh {} (expected {expected})",
                self.soc_bin, self.soc_kwh
            ));
        }
        if !(self.load_kwh >= 0.0 && self.pv_kwh >= 0.0)
            || !self.load_kwh.is_finite()
            || !self.pv_kwh.is_finite()
        {
            return invalid("load and PV must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub grid_import_kwh: f64,
    /// Signed battery energy change: +charge, -discharge.
    pub battery_delta_kwh: f64,
    pub penalty_applied: bool,
    pub done: bool,
}

/// Round-half-up SOC level in `0..bins`.
pub fn soc_to_bin_with(soc_kwh: f64, capacity_kwh: f64, bins: usize) -> Result<usize, EnvError> {
    if !(soc_kwh >= 0.0 && soc_kwh <= capacity_kwh) {
        return Err(EnvError::OutOfRange {
            soc_kwh,
            capacity_kwh,
        });
    }
    let levels = (bins - 1) as f64;
    // The nudge keeps exact halves (0.15 * 13.5 / 13.5 * 10 = 1.4999...) rounding up.
    let bin = (soc_kwh / capacity_kwh * levels + 0.5 + 1e-9).floor() as usize;
    Ok(bin.min(bins - 1))
}

/// SOC bin on the default 11-level (0..=10) scale.
pub fn soc_to_bin(soc_kwh: f64, capacity_kwh: f64) -> Result<usize, EnvError> {
    soc_to_bin_with(soc_kwh, capacity_kwh, 11)
}

/// Initial state at the first hour of `window`.
pub fn reset(
    window: &[HourlyRecord],
    initial_soc_frac: f64,
    config: &EnvConfig,
) -> Result<EnvState, EnvError> {
    let first = window.first().ok_or(EnvError::EmptyWindow)?;
    if !(initial_soc_frac >= config.soc_min_frac - ENERGY_TOL
        && initial_soc_frac <= config.soc_max_frac + ENERGY_TOL)
    {
        return Err(EnvError::SocOutOfRange {
            value: initial_soc_frac,
            min: config.soc_min_frac,
            max: config.soc_max_frac,
        });
    }
    EnvState::new(first, initial_soc_frac * config.capacity_kwh, config)
}

/// One hour of battery dispatch against `record`'s load, PV and price.
///
/// Pure in its inputs. The returned `next_state` carries `record`'s load and
/// PV; [`FarmEnv`] refreshes them from the following hour. `done` is always
/// false here since episode boundaries belong to the window.
pub fn step(
    state: &EnvState,
    action: Action,
    record: &HourlyRecord,
    config: &EnvConfig,
) -> Result<StepResult, EnvError> {
    state.validate(config)?;
    let (min_kwh, max_kwh) = (config.soc_min_kwh(), config.soc_max_kwh());
    let soc = state.soc_kwh;
    let (load, pv) = (record.load_kwh, record.pv_kwh);
    let residual = (load - pv).max(0.0);

    let penalty_applied = match action {
        Action::Charge => soc >= max_kwh,
        Action::Discharge => soc <= min_kwh,
        Action::Idle => false,
    };

    let (grid_import, delta, next_soc) = match action {
        _ if penalty_applied => (residual, 0.0, soc),
        Action::Idle => (residual, 0.0, soc),
        Action::Charge => {
            let charge = config.rate_kw.min(max_kwh - soc);
            let import = (load + charge - pv).max(0.0);
            (import, charge, (soc + charge).min(max_kwh))
        }
        Action::Discharge => {
            let discharge = config.rate_kw.min(soc - min_kwh).min(residual);
            let import = (load - pv - discharge).max(0.0);
            (import, -discharge, (soc - discharge).max(min_kwh))
        }
    };

    let penalty = if penalty_applied {
        config.penalty_value
    } else {
        0.0
    };
    let reward = -grid_import * record.price - penalty;
    let next_state = EnvState {
        hour: (state.hour + 1) % HOURS_PER_DAY,
        soc_kwh: next_soc,
        soc_bin: config.bin(next_soc)?,
        load_kwh: load,
        pv_kwh: pv,
    };
    Ok(StepResult {
        next_state,
        reward,
        grid_import_kwh: grid_import,
        battery_delta_kwh: delta,
        penalty_applied,
        done: false,
    })
}

/// Network input: hour/23, soc_bin/(bins-1), load and PV over their normalization maxima.
pub fn encode_observation(state: &EnvState, config: &EnvConfig) -> [f64; 4] {
    [
        state.hour as f64 / (HOURS_PER_DAY - 1) as f64,
        state.soc_bin as f64 / (config.soc_bins - 1) as f64,
        state.load_kwh / config.load_norm_kwh,
        state.pv_kwh / config.pv_norm_kwh,
    ]
}

pub const OBSERVATION_SIZE: usize = 4;

/// An episode over a contiguous window of hourly records.
#[derive(Debug, Clone)]
pub struct FarmEnv<'a> {
    window: &'a [HourlyRecord],
    config: &'a EnvConfig,
    cursor: usize,
    state: EnvState,
}

impl<'a> FarmEnv<'a> {
    pub fn new(
        window: &'a [HourlyRecord],
        initial_soc_frac: f64,
        config: &'a EnvConfig,
    ) -> Result<Self, EnvError> {
        let state = reset(window, initial_soc_frac, config)?;
        Ok(Self {
            window,
            config,
            cursor: 0,
            state,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        self.config
    }

    /// Record of the current hour.
    pub fn record(&self) -> &HourlyRecord {
        &self.window[self.cursor.min(self.window.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.window.len()
    }

    pub fn observation(&self) -> [f64; 4] {
        encode_observation(&self.state, self.config)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let record = &self.window[self.cursor];
        let mut result = step(&self.state, action, record, self.config)?;
        self.cursor += 1;
        if let Some(next) = self.window.get(self.cursor) {
            result.next_state.hour = next.hour_of_day();
            result.next_state.load_kwh = next.load_kwh;
            result.next_state.pv_kwh = next.pv_kwh;
        } else {
            result.done = true;
        }
        self.state = result.next_state;
        Ok(result)
    }
}

/// One row of a per-step trace. `soc_kwh` is the level when the action was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub hour: usize,
    pub soc_kwh: f64,
    pub action: Action,
    pub pv_kwh: f64,
    pub load_kwh: f64,
    pub price: f64,
    pub grid_import_kwh: f64,
    pub reward: f64,
}

pub const TRACE_HEADER: &str = "hour,soc_kwh,action,pv_kwh,load_kwh,price,grid_import_kwh,reward";

pub fn write_trace<W: Write>(rows: &[TraceRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.hour, r.soc_kwh, r.action, r.pv_kwh, r.load_kwh, r.price, r.grid_import_kwh, r.reward
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(load: f64, pv: f64, price: f64) -> HourlyRecord {
        HourlyRecord {
            index: 10,
            load_kwh: load,
            pv_kwh: pv,
            price,
        }
    }

    fn state(soc: f64, r: &HourlyRecord, cfg: &EnvConfig) -> EnvState {
        EnvState::new(r, soc, cfg).unwrap()
    }

    #[test]
    fn reset_examples() {
        let cfg = EnvConfig::default();
        let w = [rec(1.0, 0.0, 0.1)];
        let s = reset(&w, 0.5, &cfg).unwrap();
        assert_eq!(s.soc_kwh, 6.75);
        assert_eq!(s.soc_bin, 5);
        assert_eq!(reset(&w, 0.15, &cfg).unwrap().soc_bin, 2);
        assert!(matches!(
            reset(&w, 0.9, &cfg),
            Err(EnvError::SocOutOfRange { .. })
        ));
        assert!(matches!(reset(&[], 0.5, &cfg), Err(EnvError::EmptyWindow)));
    }

    #[test]
    fn soc_bins() {
        assert_eq!(soc_to_bin(0.0, 13.5).unwrap(), 0);
        assert_eq!(soc_to_bin(13.5, 13.5).unwrap(), 10);
        assert_eq!(soc_to_bin(7.02, 13.5).unwrap(), 5);
        assert_eq!(soc_to_bin(0.85 * 13.5, 13.5).unwrap(), 9);
        assert!(soc_to_bin(-0.1, 13.5).is_err());
        assert!(soc_to_bin(14.0, 13.5).is_err());
    }

    #[test]
    fn idle_step() {
        let cfg = EnvConfig::default();
        let r = rec(5.0, 2.0, 0.10);
        let out = step(&state(6.75, &r, &cfg), Action::Idle, &r, &cfg).unwrap();
        assert!((out.grid_import_kwh - 3.0).abs() < 1e-12);
        assert!((out.reward + 0.30).abs() < 1e-12);
        assert_eq!(out.next_state.soc_kwh, 6.75);
        assert_eq!(out.next_state.hour, 11);

        let z = rec(0.0, 0.0, 0.10);
        let out = step(&state(6.75, &z, &cfg), Action::Idle, &z, &cfg).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn charge_capped_by_headroom() {
        let cfg = EnvConfig::default();
        let r = rec(4.0, 0.0, 0.20);
        let out = step(&state(6.75, &r, &cfg), Action::Charge, &r, &cfg).unwrap();
        assert!((out.battery_delta_kwh - 4.725).abs() < 1e-12);
        assert!((out.grid_import_kwh - 8.725).abs() < 1e-12);
        assert!((out.reward + 1.745).abs() < 1e-12);
        assert!((out.next_state.soc_kwh - 11.475).abs() < 1e-12);
        assert!(!out.penalty_applied);
    }

    #[test]
    fn charge_at_max_is_penalized_idle() {
        let cfg = EnvConfig::default();
        let r = rec(6.0, 1.0, 0.20);
        let s = state(0.85 * 13.5, &r, &cfg);
        let out = step(&s, Action::Charge, &r, &cfg).unwrap();
        assert!(out.penalty_applied);
        assert_eq!(out.next_state.soc_kwh, s.soc_kwh);
        assert!((out.reward - (-(5.0 * 0.20) - 15.0)).abs() < 1e-12);
    }

    #[test]
    fn discharge_capped_by_load() {
        let cfg = EnvConfig::default();
        let r = rec(3.0, 0.0, 0.10);
        let out = step(&state(6.75, &r, &cfg), Action::Discharge, &r, &cfg).unwrap();
        assert!((out.battery_delta_kwh + 3.0).abs() < 1e-12);
        assert_eq!(out.grid_import_kwh, 0.0);
        assert_eq!(out.reward, 0.0);
        assert!((out.next_state.soc_kwh - 3.75).abs() < 1e-12);
    }

    #[test]
    fn discharge_at_min_is_penalized() {
        let cfg = EnvConfig::default();
        let r = rec(3.0, 0.0, 0.10);
        let out = step(&state(0.15 * 13.5, &r, &cfg), Action::Discharge, &r, &cfg).unwrap();
        assert!(out.penalty_applied);
        assert!((out.reward + 0.3 + 15.0).abs() < 1e-12);
    }

    #[test]
    fn surplus_pv_is_curtailed_not_credited() {
        let cfg = EnvConfig::default();
        let r = rec(2.0, 10.0, 0.30);
        let out = step(&state(6.75, &r, &cfg), Action::Charge, &r, &cfg).unwrap();
        assert_eq!(out.grid_import_kwh, 0.0);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.battery_delta_kwh, 4.725);
    }

    #[test]
    fn invalid_state_rejected() {
        let cfg = EnvConfig::default();
        let r = rec(1.0, 0.0, 0.1);
        let mut s = state(6.75, &r, &cfg);
        s.soc_bin = 9;
        assert!(matches!(
            step(&s, Action::Idle, &r, &cfg),
            Err(EnvError::InvalidState(_))
        ));
        s = state(6.75, &r, &cfg);
        s.hour = 24;
        assert!(step(&s, Action::Idle, &r, &cfg).is_err());
    }

    #[test]
    fn observation_encoding() {
        let cfg = EnvConfig::default();
        let zero = EnvState {
            hour: 0,
            soc_kwh: 0.0,
            soc_bin: 0,
            load_kwh: 0.0,
            pv_kwh: 0.0,
        };
        assert_eq!(encode_observation(&zero, &cfg), [0.0; 4]);
        let s = EnvState {
            hour: 23,
            soc_bin: 5,
            ..zero
        };
        let obs = encode_observation(&s, &cfg);
        assert_eq!(obs[0], 1.0);
        assert_eq!(obs[1], 0.5);
    }

    #[test]
    fn env_runs_window_to_done() {
        let cfg = EnvConfig::default();
        let window: Vec<_> = (0..30)
            .map(|i| HourlyRecord {
                index: i,
                load_kwh: 3.0 + i as f64,
                pv_kwh: 0.0,
                price: 0.1,
            })
            .collect();
        let mut env = FarmEnv::new(&window, 0.5, &cfg).unwrap();
        let mut steps = 0;
        loop {
            let out = env.step(Action::Idle).unwrap();
            steps += 1;
            if out.done {
                break;
            }
            assert_eq!(out.next_state.load_kwh, window[steps].load_kwh);
            assert_eq!(out.next_state.hour, steps % 24);
        }
        assert_eq!(steps, 30);
        assert!(matches!(env.step(Action::Idle), Err(EnvError::EpisodeDone)));
    }
}
