//! Battery dispatch for a PV-equipped dairy farm.
//!
//! An hourly MDP over load/PV/price series ([`env`]), a PPO agent built on a
//! small hand-written network library ([`nn`], [`ppo`]), Q-learning and rule
//! baselines ([`baselines`]), and an experiment harness ([`harness`]) that
//! trains on January and evaluates February–December.

pub mod baselines;
pub mod calendar;
pub mod data;
pub mod env;
pub mod harness;
pub mod nn;
pub mod par;
pub mod ppo;

pub use data::{DatasetSplit, HourlyRecord, YearSeries};
pub use env::{Action, EnvConfig, EnvState, StepResult};
