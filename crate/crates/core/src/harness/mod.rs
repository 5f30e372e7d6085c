//! Experiment orchestration behind the `powerwall-rl` binary.

pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod policy;

pub use config::{ConfigError, DataSource, ExperimentConfig, SEED_ENV_VAR};
pub use evaluate::{
    evaluate_policy, no_battery_eval, reduction_percent, trace_day, ActorPolicy, Decision,
    IdlePolicy, MetricError, MonthImport, Policy, PolicyEval, QPolicy, RulePolicy, TraceError,
};
pub use experiment::{
    run_experiment, run_experiment_with, write_artifacts, write_atomic, Distribution, EvalReport,
    ExperimentError, ExperimentOutcome, Progress, ALGORITHMS,
};
pub use policy::{LoadedPolicy, PolicyLoadError};
