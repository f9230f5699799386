//! Seeded Monte Carlo over independent episodes.
//!
//! Runs may execute on several threads, but their per-run summaries are
//! always folded in run-index order, so the aggregate is bit-identical for a
//! given master seed whatever the worker count.

use serde::Serialize;

use crate::base::{BaseLearner, BaseSpec, KlUcb, Ucb1};
use crate::config::{EnvironmentSpec, ExperimentConfig, MetaKind};
use crate::delayed_ucb::{DelayedUcb, IndexKind};
use crate::error::{Error, Result};
use crate::labkit::regret::{pseudo_regret_curve, realized_regret_curve};
use crate::meta::{Bold, Qpmd};
use crate::protocol::{Episode, Learner, LearnerSummary, RunTrace};
use crate::streams::Streams;

/// Builds the delayed learner described by the config.
pub fn build_learner(config: &ExperimentConfig) -> Result<Box<dyn Learner>> {
    let k = config.environment.num_actions();
    let base = config.learner.base.clone();
    base.validate()?;
    Ok(match config.learner.meta {
        MetaKind::None => match base {
            BaseSpec::Ucb1 => Box::new(DelayedUcb::new(k, IndexKind::Ucb1)),
            BaseSpec::KlUcb { tolerance } => {
                Box::new(DelayedUcb::new(k, IndexKind::KlUcb).with_tolerance(tolerance)?)
            }
            other => {
                return Err(Error::InvalidParameter(format!(
                    "{} has no white-box delayed variant",
                    other.name()
                )))
            }
        },
        MetaKind::Bold => Box::new(Bold::new(
            k,
            Box::new(move || base.build(k).expect("validated base spec")),
        )),
        MetaKind::Qpmd => Box::new(Qpmd::new(base.build(k)?)),
    })
}

/// The non-delayed learner a configured learner should reduce to without delays.
pub fn build_undelayed_counterpart(config: &ExperimentConfig) -> Result<Box<dyn BaseLearner>> {
    let k = config.environment.num_actions();
    match (&config.learner.meta, &config.learner.base) {
        (MetaKind::None, BaseSpec::Ucb1) => Ok(Box::new(Ucb1::new(k))),
        (MetaKind::None, BaseSpec::KlUcb { tolerance }) => Ok(Box::new(KlUcb::new(k, *tolerance)?)),
        (_, base) => base.build(k),
    }
}

/// Everything one episode produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_index: usize,
    pub trace: RunTrace,
    /// Learner statistics at the horizon.
    pub learner: LearnerSummary,
    /// QPM-D base action counts after the extended run, when requested.
    pub extended_base_counts: Option<Vec<usize>>,
}

/// Plays episode `run_index` of the experiment.
pub fn run_single(config: &ExperimentConfig, run_index: usize) -> Result<RunOutput> {
    run_single_with(config, run_index, &config.delay)
}

/// Same as [`run_single`] with a different delay model (same seeds).
pub fn run_single_with(
    config: &ExperimentConfig,
    run_index: usize,
    delays: &crate::environments::DelayModel,
) -> Result<RunOutput> {
    if config.horizon == 0 {
        return Err(Error::EmptyRun);
    }
    let mut env = config.environment.build();
    let mut learner = build_learner(config)?;
    let streams = Streams::derive(config.seed, run_index as u64);
    let mut episode =
        Episode::new(&mut *env, &mut *learner, delays, streams)?.with_faults(config.faults);
    for _ in 0..config.horizon {
        episode.step()?;
    }
    let summary = episode.learner().summary();
    let mut extended_base_counts = None;
    if config.learner.extended_run {
        let cap = config.horizon.saturating_mul(1000).max(1_000_000);
        while episode.learner().summary().base_queries.unwrap_or(usize::MAX) < config.horizon {
            if episode.steps() >= cap {
                return Err(Error::ProtocolViolation(format!(
                    "extended run did not reach {} base queries within {cap} steps",
                    config.horizon
                )));
            }
            episode.step()?;
        }
        extended_base_counts = episode.learner().summary().base_action_counts;
    }
    Ok(RunOutput {
        run_index,
        trace: episode.into_trace(config.horizon),
        learner: summary,
        extended_base_counts,
    })
}

/// Per-run reduction of a trace; what the aggregator keeps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub regret_curve: Vec<f64>,
    /// `G*_t` for every `t`.
    pub g_star_curve: Vec<usize>,
    /// `G*_{i,t}`, indexed `[t - 1][i]`.
    pub arm_g_star_curve: Vec<Vec<usize>>,
    pub play_counts: Vec<usize>,
    pub learner: LearnerSummary,
    pub extended_base_counts: Option<Vec<usize>>,
}

impl RunSummary {
    pub fn from_output(config: &ExperimentConfig, output: &RunOutput) -> Result<Self> {
        let trace = &output.trace;
        let regret_curve = match &config.environment {
            EnvironmentSpec::Bernoulli { means } => pseudo_regret_curve(&trace.actions, means),
            EnvironmentSpec::Matrix { matrix, .. } => realized_regret_curve(trace, matrix)?,
        };
        let mut peak = vec![0usize; trace.num_actions];
        let arm_g_star_curve = trace
            .per_action_gap_series()
            .into_iter()
            .map(|row| {
                for (p, g) in peak.iter_mut().zip(row) {
                    *p = (*p).max(g);
                }
                peak.clone()
            })
            .collect();
        Ok(RunSummary {
            regret_curve,
            g_star_curve: trace.max_outstanding_series(),
            arm_g_star_curve,
            play_counts: trace.play_counts(),
            learner: output.learner.clone(),
            extended_base_counts: output.extended_base_counts.clone(),
        })
    }
}

/// Running mean and squared deviation, element-wise (Welford).
#[derive(Debug, Clone, Default)]
struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn push<I: IntoIterator<Item = f64>>(&mut self, values: I) {
        self.count += 1;
        let n = self.count as f64;
        for (i, x) in values.into_iter().enumerate() {
            if i == self.mean.len() {
                self.mean.push(0.0);
                self.m2.push(0.0);
            }
            let delta = x - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x - self.mean[i]);
        }
    }

    /// Sample standard deviation over `sqrt(count)`; zero for a single run.
    fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| (m2 / (n - 1.0)).sqrt() / n.sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStats {
    pub runs: usize,
    pub horizon: usize,
    pub num_actions: usize,
    /// Mean cumulative regret after each step.
    pub mean_regret: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Mean of `G*_n`.
    pub mean_g_star: f64,
    pub g_star_stderr: f64,
    /// Mean of `G*_{i,n}` for each arm.
    pub mean_arm_g_star: Vec<f64>,
    /// Mean of `G*_t` for each `t`.
    pub mean_g_star_curve: Vec<f64>,
    /// Mean of `G*_{i,t}`, indexed `[t - 1][i]`.
    pub mean_arm_g_star_curve: Vec<Vec<f64>>,
    pub mean_play_counts: Vec<f64>,
    pub mean_pool_size: Option<f64>,
    pub mean_base_queries: Option<f64>,
    pub mean_base_action_counts: Option<Vec<f64>>,
    pub mean_extended_base_counts: Option<Vec<f64>>,
}

impl AggregateStats {
    pub fn final_regret(&self) -> f64 {
        *self.mean_regret.last().expect("horizon >= 1")
    }

    pub fn final_stderr(&self) -> f64 {
        *self.stderr.last().expect("horizon >= 1")
    }
}

/// Folds run summaries, which must arrive in run-index order.
#[derive(Debug, Default)]
pub struct Aggregator {
    regret: Moments,
    g_star: Moments,
    g_star_curve: Moments,
    arm_g_star: Moments,
    arm_g_star_curve: Moments,
    plays: Moments,
    pool: Moments,
    queries: Moments,
    base_counts: Moments,
    extended: Moments,
}

impl Aggregator {
    pub fn push(&mut self, run: &RunSummary) {
        self.regret.push(run.regret_curve.iter().copied());
        self.g_star
            .push(run.g_star_curve.last().map(|&g| g as f64));
        self.g_star_curve
            .push(run.g_star_curve.iter().map(|&g| g as f64));
        if let Some(last) = run.arm_g_star_curve.last() {
            self.arm_g_star.push(last.iter().map(|&g| g as f64));
        }
        self.arm_g_star_curve.push(
            run.arm_g_star_curve
                .iter()
                .flat_map(|row| row.iter().map(|&g| g as f64)),
        );
        self.plays.push(run.play_counts.iter().map(|&c| c as f64));
        if let Some(pool) = run.learner.pool_size {
            self.pool.push([pool as f64]);
        }
        if let Some(q) = run.learner.base_queries {
            self.queries.push([q as f64]);
        }
        if let Some(counts) = &run.learner.base_action_counts {
            self.base_counts.push(counts.iter().map(|&c| c as f64));
        }
        if let Some(counts) = &run.extended_base_counts {
            self.extended.push(counts.iter().map(|&c| c as f64));
        }
    }

    pub fn finish(self, horizon: usize, num_actions: usize) -> AggregateStats {
        let scalar = |m: &Moments| (m.count > 0).then(|| m.mean[0]);
        let vector = |m: &Moments| (m.count > 0).then(|| m.mean.clone());
        let stderr = self.regret.stderr();
        AggregateStats {
            runs: self.regret.count,
            horizon,
            num_actions,
            mean_g_star: self.g_star.mean.first().copied().unwrap_or(0.0),
            g_star_stderr: self.g_star.stderr().first().copied().unwrap_or(0.0),
            mean_arm_g_star: self.arm_g_star.mean.clone(),
            mean_g_star_curve: self.g_star_curve.mean.clone(),
            mean_arm_g_star_curve: self
                .arm_g_star_curve
                .mean
                .chunks(num_actions.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
            mean_play_counts: self.plays.mean.clone(),
            mean_pool_size: scalar(&self.pool),
            mean_base_queries: scalar(&self.queries),
            mean_base_action_counts: vector(&self.base_counts),
            mean_extended_base_counts: vector(&self.extended),
            mean_regret: self.regret.mean,
            stderr,
        }
    }
}

/// Runs `config.runs` episodes on up to `jobs` threads.
pub fn monte_carlo(config: &ExperimentConfig, jobs: usize) -> Result<AggregateStats> {
    monte_carlo_with(config, jobs, |_| Ok(()))
}

/// Like [`monte_carlo`], also handing every run's full output to `inspect`
/// (in run-index order) before it is reduced.
pub fn monte_carlo_with<F>(config: &ExperimentConfig, jobs: usize, mut inspect: F) -> Result<AggregateStats>
where
    F: FnMut(&RunOutput) -> Result<()>,
{
    if config.runs == 0 {
        return Err(Error::InvalidParameter("run count must be at least 1".into()));
    }
    if config.learner.meta == MetaKind::Bold && !config.delay.is_action_independent() {
        log::warn!(
            "BOLD with action-dependent delays: instance choice is no longer independent of past predictions"
        );
    }
    let jobs = jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {jobs} workers: {e}")))?;
    let chunk = jobs * 4;
    let mut aggregator = Aggregator::default();
    let mut start = 0;
    while start < config.runs {
        let end = (start + chunk).min(config.runs);
        let outputs: Vec<Result<RunOutput>> = pool.install(|| {
            use rayon::prelude::*;
            (start..end)
                .into_par_iter()
                .map(|run| run_single(config, run))
                .collect()
        });
        for output in outputs {
            let output = output?;
            inspect(&output)?;
            aggregator.push(&RunSummary::from_output(config, &output)?);
            log::debug!("run {} done", output.run_index);
        }
        start = end;
    }
    Ok(aggregator.finish(config.horizon, config.environment.num_actions()))
}
