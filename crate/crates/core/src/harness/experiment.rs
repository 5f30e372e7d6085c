//! The full comparison: train PPO and Q-learning per seeded run, evaluate all
//! four policies on February–December, aggregate and write artifacts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{
    evaluate_policy, no_battery_eval, reduction_percent, ActorPolicy, MetricError, PolicyEval,
    QPolicy, RulePolicy,
};
use crate::baselines::{train_q, write_qtable_csv, QError, QTable};
use crate::calendar::MONTH_NAMES;
use crate::data::{split, YearSeries};
use crate::env::EnvError;
use crate::par;
use crate::ppo::{train_with, write_history_csv, EpisodeLog, PpoAgent, PpoError};

/// Report column order.
pub const ALGORITHMS: [&str; 4] = ["ppo", "qlearn", "rule", "no_battery"];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("run {run}: {source}")]
    Ppo { run: usize, source: PpoError },
    #[error("run {run}: {source}")]
    QLearning { run: usize, source: QError },
    #[error("run {run}: {source}")]
    Env { run: usize, source: EnvError },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub fn is_divergence(&self) -> bool {
        match self {
            ExperimentError::Ppo { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

/// Five-number summary with type-7 (linear interpolation) quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Distribution {
    /// `None` for empty input.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRun {
    pub algorithm: String,
    #[serde(flatten)]
    pub eval: PolicyEval,
    pub reduction_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    /// In [`ALGORITHMS`] order.
    pub algorithms: Vec<AlgorithmRun>,
}

impl RunReport {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmRun> {
        self.algorithms.iter().find(|a| a.algorithm == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    /// Mean over successful runs, per month.
    pub mean_monthly_import_kwh: Vec<f64>,
    /// Sum of `mean_monthly_import_kwh`.
    pub mean_annual_import_kwh: f64,
    pub annual_import_kwh: Distribution,
    pub reduction_percent: Distribution,
}

/// Difference of median reductions, `a − b`, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDelta {
    pub a: String,
    pub b: String,
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run: usize,
    pub seed: u64,
    pub error: String,
    pub divergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub base_seed: u64,
    pub runs: usize,
    pub ppo_episodes: usize,
    pub qlearn_episodes: usize,
    pub train_hours: usize,
    pub test_hours: usize,
    pub months: Vec<String>,
    pub per_run: Vec<RunReport>,
    pub summary: Vec<AlgorithmSummary>,
    pub pairwise: Vec<PairwiseDelta>,
    pub failed_runs: Vec<FailedRun>,
}

impl EvalReport {
    pub fn summary_for(&self, name: &str) -> Option<&AlgorithmSummary> {
        self.summary.iter().find(|s| s.algorithm == name)
    }

    /// Per-run annual imports of one algorithm, in run order.
    pub fn annual_imports(&self, name: &str) -> Vec<f64> {
        self.per_run
            .iter()
            .filter_map(|r| r.algorithm(name).map(|a| a.eval.annual_kwh))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

/// Trained artifacts of one successful run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run: usize,
    pub seed: u64,
    pub agent: PpoAgent,
    pub ppo_history: Vec<EpisodeLog>,
    pub q_table: QTable,
    pub q_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub artifacts: Vec<RunArtifacts>,
    /// First error among failed runs, kept for the exit status.
    pub first_failure: Option<String>,
    pub diverged: bool,
    pub soc_bins: usize,
}

/// Progress notifications from [`run_experiment_with`].
#[derive(Debug, Clone, Copy)]
pub enum Progress {
    RunStarted { run: usize },
    PpoEpisode { run: usize, log: EpisodeLog },
    RunFinished { run: usize },
}

type RunOk = (RunReport, RunArtifacts);

fn run_one(
    run: usize,
    cfg: &ExperimentConfig,
    series: &YearSeries,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<RunOk, ExperimentError> {
    let seed = cfg.base_seed + run as u64;
    let parts = split(series);
    progress(Progress::RunStarted { run });

    let ppo = train_with(
        parts.train,
        &cfg.env,
        &cfg.ppo,
        cfg.ppo_episodes,
        seed,
        &mut |log| progress(Progress::PpoEpisode { run, log: *log }),
    )
    .map_err(|source| ExperimentError::Ppo { run, source })?;
    let q = train_q(
        parts.train,
        &cfg.env,
        *series.tiers(),
        &cfg.qlearn,
        cfg.qlearn_episodes,
        seed,
    )
    .map_err(|source| ExperimentError::QLearning { run, source })?;

    let env_err = |source| ExperimentError::Env { run, source };
    let tiers = series.tiers();
    let soc = cfg.eval_initial_soc_frac;
    let evals = [
        evaluate_policy(
            &ActorPolicy(&ppo.agent.actor),
            parts.test,
            tiers,
            &cfg.env,
            soc,
        )
        .map_err(env_err)?,
        evaluate_policy(&QPolicy(&q.table), parts.test, tiers, &cfg.env, soc).map_err(env_err)?,
        evaluate_policy(
            &RulePolicy(cfg.rule.clone()),
            parts.test,
            tiers,
            &cfg.env,
            soc,
        )
        .map_err(env_err)?,
        no_battery_eval(parts.test),
    ];
    let baseline = evals[3].annual_kwh;
    let algorithms = ALGORITHMS
        .iter()
        .zip(evals)
        .map(|(name, eval)| {
            Ok(AlgorithmRun {
                algorithm: name.to_string(),
                reduction_percent: reduction_percent(baseline, eval.annual_kwh)?,
                eval,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    progress(Progress::RunFinished { run });

    Ok((
        RunReport {
            run,
            seed,
            algorithms,
        },
        RunArtifacts {
            run,
            seed,
            agent: ppo.agent,
            ppo_history: ppo.history,
            q_table: q.table,
            q_history: q.history,
        },
    ))
}

fn summarize(per_run: &[RunReport]) -> (Vec<AlgorithmSummary>, Vec<PairwiseDelta>) {
    if per_run.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let summary: Vec<AlgorithmSummary> = ALGORITHMS
        .iter()
        .map(|&name| {
            let rows: Vec<&AlgorithmRun> =
                per_run.iter().filter_map(|r| r.algorithm(name)).collect();
            let n = rows.len() as f64;
            let months = rows.first().map_or(0, |r| r.eval.monthly.len());
            let mean_monthly: Vec<f64> = (0..months)
                .map(|m| {
                    rows.iter()
                        .map(|r| r.eval.monthly[m].import_kwh)
                        .sum::<f64>()
                        / n
                })
                .collect();
            let annual: Vec<f64> = rows.iter().map(|r| r.eval.annual_kwh).collect();
            let reductions: Vec<f64> = rows.iter().map(|r| r.reduction_percent).collect();
            AlgorithmSummary {
                algorithm: name.to_string(),
                mean_annual_import_kwh: mean_monthly.iter().sum(),
                mean_monthly_import_kwh: mean_monthly,
                annual_import_kwh: Distribution::from_values(&annual)
                    .expect("summaries are built from at least one run"),
                reduction_percent: Distribution::from_values(&reductions)
                    .expect("summaries are built from at least one run"),
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for (i, a) in summary.iter().enumerate() {
        for b in &summary[i + 1..] {
            pairwise.push(PairwiseDelta {
                a: a.algorithm.clone(),
                b: b.algorithm.clone(),
                delta_points: a.reduction_percent.median - b.reduction_percent.median,
            });
        }
    }
    (summary, pairwise)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    series: &YearSeries,
) -> Result<ExperimentOutcome, ExperimentError> {
    run_experiment_with(cfg, series, &|_| {})
}

/// Runs every seed (in parallel with the `parallel` feature). Failed runs are
/// listed in the report's `failed_runs` and left out of the summary.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    series: &YearSeries,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<ExperimentOutcome, ExperimentError> {
    let results = par::map((0..cfg.runs).collect(), |run| {
        run_one(run, cfg, series, progress)
    });

    let mut per_run = Vec::new();
    let mut artifacts = Vec::new();
    let mut failed_runs = Vec::new();
    let mut first_failure = None;
    let mut diverged = false;
    for (run, result) in results.into_iter().enumerate() {
        match result {
            Ok((report, art)) => {
                per_run.push(report);
                artifacts.push(art);
            }
            Err(e) => {
                diverged |= e.is_divergence();
                first_failure.get_or_insert_with(|| e.to_string());
                failed_runs.push(FailedRun {
                    run,
                    seed: cfg.base_seed + run as u64,
                    error: e.to_string(),
                    divergence: e.is_divergence(),
                });
            }
        }
    }
    let parts = split(series);
    let (summary, pairwise) = summarize(&per_run);
    let report = EvalReport {
        base_seed: cfg.base_seed,
        runs: cfg.runs,
        ppo_episodes: cfg.ppo_episodes,
        qlearn_episodes: cfg.qlearn_episodes,
        train_hours: parts.train.len(),
        test_hours: parts.test.len(),
        months: test_months().into_iter().map(String::from).collect(),
        per_run,
        summary,
        pairwise,
        failed_runs,
    };
    Ok(ExperimentOutcome {
        report,
        artifacts,
        first_failure,
        diverged,
        soc_bins: cfg.env.soc_bins,
    })
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub const MONTHLY_IMPORT_HEADER: &str = "run,algorithm,month,import_kwh";
pub const REDUCTION_RUNS_HEADER: &str = "run,seed,algorithm,annual_import_kwh,reduction_percent";

fn monthly_import_csv(report: &EvalReport) -> String {
    let mut out = format!("{MONTHLY_IMPORT_HEADER}\n");
    for r in &report.per_run {
        for a in &r.algorithms {
            for m in &a.eval.monthly {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.run, a.algorithm, m.month, m.import_kwh
                ));
            }
        }
    }
    out
}

fn reduction_runs_csv(report: &EvalReport) -> String {
    let mut out = format!("{REDUCTION_RUNS_HEADER}\n");
    for r in &report.per_run {
        for a in &r.algorithms {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.run, r.seed, a.algorithm, a.eval.annual_kwh, a.reduction_percent
            ));
        }
    }
    out
}

/// Writes the report, plot CSVs, reward histories and checkpoints under `dir`.
pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<(), ExperimentError> {
    let report = &outcome.report;
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(
        &dir.join("monthly_import.csv"),
        monthly_import_csv(report).as_bytes(),
    )?;
    write_atomic(
        &dir.join("reduction_runs.csv"),
        reduction_runs_csv(report).as_bytes(),
    )?;
    for art in &outcome.artifacts {
        let mut buf = Vec::new();
        write_history_csv(&art.ppo_history, &mut buf).expect("writing to memory");
        write_atomic(
            &dir.join(format!("reward_history_run{}.csv", art.run)),
            &buf,
        )?;
        write_atomic(
            &dir.join("checkpoints")
                .join(format!("ppo_run{}.ckpt", art.run)),
            art.agent.checkpoint().as_bytes(),
        )?;
        let mut buf = Vec::new();
        write_qtable_csv(&art.q_table, outcome.soc_bins, &mut buf).expect("writing to memory");
        write_atomic(
            &dir.join("checkpoints")
                .join(format!("qtable_run{}.csv", art.run)),
            &buf,
        )?;
    }
    Ok(())
}

/// Month labels of the test split.
pub fn test_months() -> Vec<&'static str> {
    MONTH_NAMES[1..].to_vec()
}
