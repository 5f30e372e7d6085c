use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use powerwall_rl::baselines::{train_q, write_qtable_csv};
use powerwall_rl::calendar::Date;
use powerwall_rl::data::{generate_synthetic, split, write_csv, SyntheticConfig, YearSeries};
use powerwall_rl::env::write_trace;
use powerwall_rl::harness::{
    evaluate_policy, no_battery_eval, reduction_percent, run_experiment_with, trace_day,
    write_artifacts, write_atomic, ConfigError, ExperimentConfig, ExperimentError, LoadedPolicy,
    PolicyEval, Progress, ALGORITHMS,
};
use powerwall_rl::ppo::{train_with, write_history_csv, PpoError};

#[derive(Parser)]
#[command(
    name = "powerwall-rl",
    version,
    about = "Battery dispatch agents for a dairy farm"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly year as CSV.
    GenerateData {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional config whose `[data.generator]` table overrides generator defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one agent on January with the base seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
    },
    /// Greedy evaluation on February to December.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// PPO checkpoint, Q-table CSV, `rule` or `idle`.
        #[arg(long)]
        checkpoint: String,
    },
    /// Full multi-run comparison of PPO, Q-learning, rule-based and no battery.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Hour-by-hour trace of one day.
    TraceDay {
        #[arg(long)]
        config: PathBuf,
        /// PPO checkpoint, Q-table CSV, `rule` or `idle`.
        #[arg(long)]
        checkpoint: String,
        /// `MM-DD` or `YYYY-MM-DD`.
        #[arg(long)]
        date: Date,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ppo,
    Qlearn,
}

/// Divergence surfaced from a partially successful experiment.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Diverged(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<Diverged>() {
            return 3;
        }
        if cause
            .downcast_ref::<PpoError>()
            .is_some_and(PpoError::is_divergence)
        {
            return 3;
        }
        if let Some(x) = cause.downcast_ref::<ExperimentError>() {
            if x.is_divergence() {
                return 3;
            }
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { seed, out, config } => generate_data(seed, &out, config.as_deref()),
        Command::Train { config, algo } => train(&config, algo),
        Command::Evaluate { config, checkpoint } => evaluate(&config, &checkpoint),
        Command::Compare { config } => compare(&config),
        Command::TraceDay {
            config,
            checkpoint,
            date,
            out,
        } => trace(&config, &checkpoint, date, out.as_deref()),
    }
}

fn load(config: &Path) -> Result<(ExperimentConfig, YearSeries)> {
    let cfg = ExperimentConfig::load(config)?;
    let series = cfg.data.load(config.parent())?;
    Ok((cfg, series))
}

fn generate_data(seed: u64, out: &Path, config: Option<&Path>) -> Result<()> {
    let generator = match config {
        Some(path) => match ExperimentConfig::load(path)?.data {
            powerwall_rl::harness::DataSource::Synthetic { generator, .. } => generator,
            _ => bail!(ConfigError::Invalid(
                "generate-data needs a synthetic data source".into()
            )),
        },
        None => SyntheticConfig::default(),
    };
    let series = generate_synthetic(seed, &generator)?;
    let mut buf = Vec::new();
    write_csv(&series, &mut buf)?;
    write_atomic(out, &buf)?;
    eprintln!(
        "wrote {} ({} hours, {:.0} kWh load)",
        out.display(),
        series.records().len(),
        series.total_load()
    );
    Ok(())
}

fn train(config: &Path, algo: Algo) -> Result<()> {
    let (cfg, series) = load(config)?;
    let parts = split(&series);
    let seed = cfg.base_seed;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    match algo {
        Algo::Ppo => {
            let every = (cfg.ppo_episodes / 20).max(1);
            let out = train_with(
                parts.train,
                &cfg.env,
                &cfg.ppo,
                cfg.ppo_episodes,
                seed,
                &mut |l| {
                    if l.episode % every == 0 || l.episode + 1 == cfg.ppo_episodes {
                        eprintln!(
                            "episode {:>6}  reward {:>10.2}  epsilon {:.3}  clip {:.3}",
                            l.episode, l.reward, l.epsilon, l.clip_fraction
                        );
                    }
                },
            )?;
            let path = ckpt_dir.join("ppo.ckpt");
            write_atomic(&path, out.agent.checkpoint().as_bytes())?;
            let mut buf = Vec::new();
            write_history_csv(&out.history, &mut buf)?;
            write_atomic(&cfg.output_dir.join("reward_history.csv"), &buf)?;
            println!("{}", path.display());
        }
        Algo::Qlearn => {
            let out = train_q(
                parts.train,
                &cfg.env,
                *series.tiers(),
                &cfg.qlearn,
                cfg.qlearn_episodes,
                seed,
            )?;
            let path = ckpt_dir.join("qtable.csv");
            let mut buf = Vec::new();
            write_qtable_csv(&out.table, cfg.env.soc_bins, &mut buf)?;
            write_atomic(&path, &buf)?;
            let mut hist = String::from("episode,reward\n");
            for (i, r) in out.history.iter().enumerate() {
                hist.push_str(&format!("{i},{r}\n"));
            }
            write_atomic(
                &cfg.output_dir.join("q_reward_history.csv"),
                hist.as_bytes(),
            )?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    algorithm: &'a str,
    #[serde(flatten)]
    eval: PolicyEval,
    no_battery_annual_kwh: f64,
    reduction_percent: f64,
}

fn evaluate(config: &Path, checkpoint: &str) -> Result<()> {
    let (cfg, series) = load(config)?;
    let policy = LoadedPolicy::load(checkpoint, &cfg.rule, cfg.env.soc_bins)?;
    let test = split(&series).test;
    let eval = evaluate_policy(
        policy.as_policy().as_ref(),
        test,
        series.tiers(),
        &cfg.env,
        cfg.eval_initial_soc_frac,
    )?;
    let baseline = no_battery_eval(test).annual_kwh;
    let out = EvaluateOutput {
        algorithm: policy.name(),
        reduction_percent: reduction_percent(baseline, eval.annual_kwh)?,
        no_battery_annual_kwh: baseline,
        eval,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn compare(config: &Path) -> Result<()> {
    let (cfg, series) = load(config)?;
    let every = (cfg.ppo_episodes / 10).max(1);
    let progress = |p: Progress| match p {
        Progress::RunStarted { run } => eprintln!("run {run}: training"),
        Progress::PpoEpisode { run, log } if log.episode % every == 0 => eprintln!(
            "run {run}: ppo episode {:>6}  reward {:>10.2}  epsilon {:.3}",
            log.episode, log.reward, log.epsilon
        ),
        Progress::RunFinished { run } => eprintln!("run {run}: done"),
        _ => {}
    };
    let outcome = run_experiment_with(&cfg, &series, &progress)?;
    write_artifacts(&outcome, &cfg.output_dir)?;

    let report = &outcome.report;
    println!(
        "{:<12}{:>16}{:>16}",
        "algorithm", "median kWh", "median red. %"
    );
    for name in ALGORITHMS {
        let Some(s) = report.summary_for(name) else {
            continue;
        };
        println!(
            "{:<12}{:>16.1}{:>16.3}",
            name, s.annual_import_kwh.median, s.reduction_percent.median
        );
    }
    println!("report: {}", cfg.output_dir.join("report.json").display());

    if let Some(first) = &outcome.first_failure {
        let msg = format!(
            "{} of {} runs failed; first: {first}",
            report.failed_runs.len(),
            cfg.runs
        );
        if outcome.diverged {
            return Err(Diverged(msg).into());
        }
        bail!(msg);
    }
    Ok(())
}

fn trace(config: &Path, checkpoint: &str, date: Date, out: Option<&Path>) -> Result<()> {
    let (cfg, series) = load(config)?;
    let policy = LoadedPolicy::load(checkpoint, &cfg.rule, cfg.env.soc_bins)?;
    let rows = trace_day(
        policy.as_policy().as_ref(),
        date,
        &series,
        &cfg.env,
        cfg.eval_initial_soc_frac,
    )?;
    let mut buf = Vec::new();
    write_trace(&rows, &mut buf)?;
    match out {
        Some(path) => write_atomic(path, &buf)?,
        None => print!("{}", String::from_utf8(buf).expect("trace is ASCII")),
    }
    Ok(())
}
