//! Experiment engine: drives the delivery loop to a logical-time horizon,
//! replicates runs deterministically (replication index, not thread
//! schedule, decides every random draw), aggregates across runs, and writes
//! the CSV artifacts.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agents::{AgentError, StepOutcome};
use crate::config::{Algorithm, ChannelConfig, ConfigError, CostConfig, ExperimentConfig};
use crate::cost::PenaltyFunction;
use crate::numeric::mean_and_std;
use crate::oracle::{
    ge_discard_optimize, ge_wait_optimize, GeDiscardProblem, GeDiscardSolution, GeWaitProblem,
    GeWaitSolution, OracleError,
};
use crate::policy::StochasticPolicy;

/// Safety cap on steps per run; the horizon is in time units, so a
/// pathological configuration with near-zero step durations must still
/// terminate.
pub const STEP_CAP: u64 = 100_000_000;

/// Grid size of the serialized policy snapshot.
pub const SNAPSHOT_POINTS: usize = 200;

/// Bin count of the empirical action-versus-state profile.
pub const EMPIRICAL_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {run_index}: {source}")]
    Run {
        run_index: u64,
        #[source]
        source: AgentError,
    },
    #[error("run {run_index}: step cap {cap} exceeded before the time horizon")]
    StepCap { run_index: u64, cap: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One decimated trajectory record. `state_delay` is the delay the acting
/// policy saw; `wait`/`threshold` are the actions taken from it (threshold
/// is infinite when the step could not cancel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub step: u64,
    pub time: f64,
    pub beta: f64,
    pub state_delay: f64,
    pub wait: f64,
    pub threshold: f64,
}

/// Mean applied action per state bin, the measured counterpart of the
/// parametric snapshot.
#[derive(Debug, Clone)]
pub struct BinStats {
    pub edge: f64,
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
}

impl BinStats {
    fn new(edge: f64) -> Self {
        Self { edge, sums: vec![0.0; EMPIRICAL_BINS], counts: vec![0; EMPIRICAL_BINS] }
    }

    fn record(&mut self, delay: f64, action: f64) {
        if !(0.0..=self.edge).contains(&delay) {
            return;
        }
        let index = ((delay / self.edge * EMPIRICAL_BINS as f64) as usize).min(EMPIRICAL_BINS - 1);
        self.sums[index] += action;
        self.counts[index] += 1;
    }

    pub fn mean(&self, index: usize) -> Option<f64> {
        (self.counts[index] > 0).then(|| self.sums[index] / self.counts[index] as f64)
    }

    pub fn bin_bounds(&self, index: usize) -> (f64, f64) {
        let width = self.edge / EMPIRICAL_BINS as f64;
        (width * index as f64, width * (index + 1) as f64)
    }
}

/// Empirical action profiles for whichever actions the algorithm uses.
#[derive(Debug, Clone)]
pub struct EmpiricalPolicy {
    pub wait: Option<BinStats>,
    pub threshold: Option<BinStats>,
}

impl EmpiricalPolicy {
    fn new(config: &ExperimentConfig) -> Self {
        let edge = config.agent.y_max;
        let uses_wait = matches!(
            config.agent.algorithm,
            Algorithm::Wait | Algorithm::Combined | Algorithm::ZeroWait
        );
        let uses_threshold = matches!(
            config.agent.algorithm,
            Algorithm::Discard | Algorithm::Combined | Algorithm::MaximumDelay
        );
        Self {
            wait: uses_wait.then(|| BinStats::new(edge)),
            threshold: uses_threshold.then(|| BinStats::new(edge)),
        }
    }

    fn record(&mut self, state_delay: f64, outcome: &StepOutcome) {
        if let Some(stats) = &mut self.wait {
            stats.record(state_delay, outcome.wait);
        }
        if let Some(stats) = &mut self.threshold {
            if outcome.threshold.is_finite() {
                stats.record(state_delay, outcome.threshold);
            }
        }
    }
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub run_index: u64,
    pub samples: Vec<Sample>,
    pub steps: u64,
    pub final_beta: f64,
    pub final_cost: f64,
    pub final_time: f64,
    pub final_wait_policy: Option<StochasticPolicy>,
    pub final_discard_policy: Option<StochasticPolicy>,
    pub empirical: EmpiricalPolicy,
}

/// Executes one replication: bootstrap delivery, then steps until the
/// accumulated time passes one plus the horizon. Sample zero is the
/// bootstrap record.
pub fn run_once(config: &ExperimentConfig, run_index: u64) -> Result<Trajectory, SimError> {
    let seed = config.run_seed(run_index);
    let mut env = config.build_environment(seed)?;
    let mut agent = config.build_agent(seed)?;
    let at_run = |source: AgentError| SimError::Run { run_index, source };
    agent.bootstrap(&mut env).map_err(at_run)?;

    let mut empirical = EmpiricalPolicy::new(config);
    let mut samples = vec![Sample {
        step: 0,
        time: agent.time_total(),
        beta: agent.average_cost(),
        state_delay: agent.state().expect("bootstrapped").delay,
        wait: 0.0,
        threshold: f64::INFINITY,
    }];

    let horizon_end = 1.0 + config.sim.horizon;
    let mut steps: u64 = 0;
    while agent.time_total() < horizon_end {
        if steps >= STEP_CAP {
            return Err(SimError::StepCap { run_index, cap: STEP_CAP });
        }
        let state = agent.state().expect("bootstrapped");
        let outcome = agent.step(&mut env).map_err(at_run)?;
        steps += 1;
        empirical.record(state.delay, &outcome);
        if steps.is_multiple_of(config.sim.record_decimation) {
            samples.push(Sample {
                step: steps,
                time: agent.time_total(),
                beta: agent.average_cost(),
                state_delay: state.delay,
                wait: outcome.wait,
                threshold: outcome.threshold,
            });
        }
    }

    Ok(Trajectory {
        run_index,
        samples,
        steps,
        final_beta: agent.average_cost(),
        final_cost: agent.cost_total(),
        final_time: agent.time_total(),
        final_wait_policy: agent.wait_policy().cloned(),
        final_discard_policy: agent.discard_policy().cloned(),
        empirical,
    })
}

/// Pointwise aggregate of the estimate across runs at one decimated step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub step: u64,
    pub beta_mean: f64,
    pub beta_std: f64,
}

/// Replicated experiment results.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub runs: Vec<Trajectory>,
    pub final_betas: Vec<f64>,
    pub beta_mean: f64,
    pub beta_std: f64,
    /// Aggregate over the decimated step grid common to every run.
    pub series: Vec<SeriesPoint>,
}

impl RunSummary {
    /// Standard error of the mean final estimate.
    pub fn beta_se(&self) -> f64 {
        self.beta_std / (self.final_betas.len() as f64).sqrt()
    }
}

/// Runs every replication (in parallel) and aggregates.
pub fn run_replicated(config: &ExperimentConfig) -> Result<RunSummary, SimError> {
    config.validate()?;
    let runs: Vec<Trajectory> = (0..config.sim.replications as u64)
        .into_par_iter()
        .map(|run_index| run_once(config, run_index))
        .collect::<Result<_, _>>()?;
    let final_betas: Vec<f64> = runs.iter().map(|t| t.final_beta).collect();
    let (beta_mean, beta_std) = mean_and_std(&final_betas);
    let common = runs.iter().map(|t| t.samples.len()).min().unwrap_or(0);
    let series = (0..common)
        .map(|i| {
            let betas: Vec<f64> = runs.iter().map(|t| t.samples[i].beta).collect();
            let (mean, std) = mean_and_std(&betas);
            SeriesPoint { step: runs[0].samples[i].step, beta_mean: mean, beta_std: std }
        })
        .collect();
    Ok(RunSummary { config: config.clone(), runs, final_betas, beta_mean, beta_std, series })
}

/// Reference optimum for configurations the closed-form or seeded-stream
/// oracles cover: one-way two-state channel with a penalty cost, wait-family
/// or discard-family algorithm (identity penalty only for discard).
#[derive(Debug, Clone, Copy)]
pub enum OracleReference {
    Wait(GeWaitSolution),
    Discard(GeDiscardSolution),
}

impl OracleReference {
    pub fn beta(&self) -> f64 {
        match self {
            OracleReference::Wait(s) => s.beta,
            OracleReference::Discard(s) => s.beta,
        }
    }
}

pub fn oracle_reference(config: &ExperimentConfig) -> Result<Option<OracleReference>, SimError> {
    if config.is_two_way() {
        return Ok(None);
    }
    let ChannelConfig::GilbertElliot { p, q, y0, y1 } = config.channel else {
        return Ok(None);
    };
    match config.agent.algorithm {
        Algorithm::Wait | Algorithm::ZeroWait => {
            let CostConfig::Penalty { penalty, transmission_cost } = &config.cost else {
                return Ok(None);
            };
            let problem = GeWaitProblem {
                p,
                q,
                y0,
                y1,
                transmission_cost: *transmission_cost,
                z_max: config.agent.z_max,
                penalty: *penalty,
            };
            Ok(Some(OracleReference::Wait(ge_wait_optimize(&problem)?)))
        }
        Algorithm::Discard | Algorithm::MaximumDelay => {
            let CostConfig::Penalty { penalty: PenaltyFunction::Identity, transmission_cost } =
                &config.cost
            else {
                return Ok(None);
            };
            let problem = GeDiscardProblem {
                p,
                q,
                y0,
                y1,
                transmission_cost: *transmission_cost,
                x_min: config.agent.x_min,
                x_max: config.agent.x_max,
            };
            Ok(Some(OracleReference::Discard(ge_discard_optimize(&problem)?)))
        }
        Algorithm::Combined => Ok(None),
    }
}

#[derive(Serialize)]
struct RunRow {
    run_id: u64,
    step: u64,
    time: f64,
    beta_hat: f64,
}

#[derive(Serialize)]
struct PolicyRow<'a> {
    run_id: u64,
    y: f64,
    mu: f64,
    mean_action: f64,
    kind: &'a str,
}

#[derive(Serialize)]
struct EmpiricalRow<'a> {
    run_id: u64,
    kind: &'a str,
    y_low: f64,
    y_high: f64,
    mean_action: Option<f64>,
    samples: u64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    config_hash: &'a str,
    algorithm: &'a str,
    replications: usize,
    horizon: f64,
    final_beta_mean: f64,
    final_beta_std: f64,
    final_beta_se: f64,
    oracle_beta: Option<f64>,
    gap_percent: Option<f64>,
}

fn algorithm_name(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::Wait => "wait",
        Algorithm::Discard => "discard",
        Algorithm::Combined => "combined",
        Algorithm::ZeroWait => "zero_wait",
        Algorithm::MaximumDelay => "maximum_delay",
    }
}

/// Writes `runs.csv`, `policy.csv`, `policy_empirical.csv`, `summary.csv`,
/// and `config.resolved.json` into an existing directory.
pub fn write_outputs(
    summary: &RunSummary,
    reference: Option<&OracleReference>,
    dir: &Path,
) -> Result<(), SimError> {
    let mut runs = csv::Writer::from_path(dir.join("runs.csv"))?;
    for trajectory in &summary.runs {
        for sample in &trajectory.samples {
            runs.serialize(RunRow {
                run_id: trajectory.run_index,
                step: sample.step,
                time: sample.time,
                beta_hat: sample.beta,
            })?;
        }
    }
    runs.flush()?;

    // Two-way policies are sliced at the mean feedback delay for the
    // serialized profile.
    let fixed_feedback =
        summary.config.sim.feedback_channel.as_ref().map(|c| c.stationary_mean_delay());
    let mut policy = csv::Writer::from_path(dir.join("policy.csv"))?;
    for trajectory in &summary.runs {
        let snapshots = [
            ("wait", &trajectory.final_wait_policy),
            ("discard", &trajectory.final_discard_policy),
        ];
        for (kind, maybe_policy) in snapshots {
            let Some(p) = maybe_policy else { continue };
            let rows = p
                .snapshot_rows(SNAPSHOT_POINTS, fixed_feedback)
                .map_err(|e| ConfigError::Build(e.to_string()))?;
            for row in rows {
                policy.serialize(PolicyRow {
                    run_id: trajectory.run_index,
                    y: row.delay,
                    mu: row.mu,
                    mean_action: row.mean_action,
                    kind,
                })?;
            }
        }
    }
    policy.flush()?;

    let mut empirical = csv::Writer::from_path(dir.join("policy_empirical.csv"))?;
    for trajectory in &summary.runs {
        let profiles = [
            ("wait", trajectory.empirical.wait.as_ref()),
            ("discard", trajectory.empirical.threshold.as_ref()),
        ];
        for (kind, maybe_stats) in profiles {
            let Some(stats) = maybe_stats else { continue };
            for index in 0..EMPIRICAL_BINS {
                let (y_low, y_high) = stats.bin_bounds(index);
                empirical.serialize(EmpiricalRow {
                    run_id: trajectory.run_index,
                    kind,
                    y_low,
                    y_high,
                    mean_action: stats.mean(index),
                    samples: stats.counts[index],
                })?;
            }
        }
    }
    empirical.flush()?;

    let oracle_beta = reference.map(|r| r.beta());
    let gap_percent = oracle_beta
        .filter(|beta| *beta != 0.0)
        .map(|beta| 100.0 * (summary.beta_mean - beta) / beta);
    let hash = summary.config.hash();
    let mut out = csv::Writer::from_path(dir.join("summary.csv"))?;
    out.serialize(SummaryRow {
        config_hash: &hash,
        algorithm: algorithm_name(summary.config.agent.algorithm),
        replications: summary.config.sim.replications,
        horizon: summary.config.sim.horizon,
        final_beta_mean: summary.beta_mean,
        final_beta_std: summary.beta_std,
        final_beta_se: summary.beta_se(),
        oracle_beta,
        gap_percent,
    })?;
    out.flush()?;

    fs::write(dir.join("config.resolved.json"), summary.config.resolved_json())?;
    Ok(())
}

/// One sweep point: the pinned experiment plus its references.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: RunSummary,
    pub oracle_beta: Option<f64>,
    /// Zero-wait null policy under the identical pinned configuration.
    pub baseline_beta: f64,
}

/// Reruns the experiment for every sweep value, with a zero-wait baseline
/// per point.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepPoint>, SimError> {
    config.validate()?;
    let sweep = config.sweep.clone().ok_or(ConfigError::Invalid {
        field: "sweep",
        reason: "sweep requested but no sweep section declared".into(),
    })?;
    let mut points = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let pinned = config.with_sweep_value(sweep.axis, value)?;
        let summary = run_replicated(&pinned)?;
        let oracle_beta = oracle_reference(&pinned)?.map(|r| r.beta());
        let mut baseline_config = pinned.clone();
        baseline_config.agent.algorithm = Algorithm::ZeroWait;
        let baseline = run_replicated(&baseline_config)?;
        points.push(SweepPoint { value, summary, oracle_beta, baseline_beta: baseline.beta_mean });
    }
    Ok(points)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    axis: &'a str,
    value: f64,
    final_beta_mean: f64,
    final_beta_std: f64,
    oracle_beta: Option<f64>,
    baseline_beta: f64,
}

/// Writes `sweep.csv` into an existing directory.
pub fn write_sweep_csv(
    config: &ExperimentConfig,
    points: &[SweepPoint],
    dir: &Path,
) -> Result<(), SimError> {
    let axis = match config.sweep.as_ref().map(|s| s.axis) {
        Some(crate::config::SweepAxis::Rho) => "rho",
        Some(crate::config::SweepAxis::TransmissionCost) => "transmission_cost",
        Some(crate::config::SweepAxis::BackwardMean) => "backward_mean",
        None => "none",
    };
    let mut out = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for point in points {
        out.serialize(SweepRow {
            axis,
            value: point.value,
            final_beta_mean: point.summary.beta_mean,
            final_beta_std: point.summary.beta_std,
            oracle_beta: point.oracle_beta,
            baseline_beta: point.baseline_beta,
        })?;
    }
    out.flush()?;
    Ok(())
}
