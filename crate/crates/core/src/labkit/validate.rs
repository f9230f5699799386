//! Exact invariant checks over a configured experiment.

use std::fmt;

use serde::Serialize;

use crate::config::{EnvironmentSpec, ExperimentConfig, MetaKind};
use crate::environments::DelayModel;
use crate::error::Result;
use crate::labkit::montecarlo::{build_undelayed_counterpart, monte_carlo_with, run_single_with, RunOutput};
use crate::labkit::reorder::{check_feeds, ObservedFeeds, ReorderReport};
use crate::protocol::{outstanding_count, run_undelayed, RunTrace};
use crate::streams::Streams;

/// Runs compared against their non-delayed counterpart.
pub const ZERO_DELAY_RUNS: usize = 3;
/// Steps at which the outstanding count is recomputed from scratch on long runs.
pub const OUTSTANDING_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    OutstandingOracle,
    Partition,
    DeliveryCompleteness,
    PoolLaw,
    QpmdLemma,
    ZeroDelayEquivalence,
    ReorderDistribution,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::OutstandingOracle,
        Check::Partition,
        Check::DeliveryCompleteness,
        Check::PoolLaw,
        Check::QpmdLemma,
        Check::ZeroDelayEquivalence,
        Check::ReorderDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::OutstandingOracle => "outstanding-oracle",
            Check::Partition => "partition",
            Check::DeliveryCompleteness => "delivery-completeness",
            Check::PoolLaw => "pool-law",
            Check::QpmdLemma => "qpmd-lemma",
            Check::ZeroDelayEquivalence => "zero-delay-equivalence",
            Check::ReorderDistribution => "reorder-distribution",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: Check,
    pub run: Option<usize>,
    pub t: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.check)?;
        if let Some(run) = self.run {
            write!(f, " run={run}")?;
        }
        if let Some(t) = self.t {
            write!(f, " t={t}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub status: Status,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub runs: usize,
    pub checks: Vec<CheckOutcome>,
    pub reorder: Option<ReorderReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    /// The first failing check, in [`Check::ALL`] order.
    pub fn first_failure(&self) -> Option<&Violation> {
        self.checks.iter().find_map(|c| c.violation.as_ref())
    }

    pub fn outcome(&self, check: Check) -> &CheckOutcome {
        self.checks
            .iter()
            .find(|c| c.check == check)
            .expect("every check has an outcome")
    }
}

fn violation(check: Check, run: usize, t: Option<usize>, detail: String) -> Violation {
    Violation {
        check,
        run: Some(run),
        t,
        detail,
    }
}

/// Steps at which the brute-force outstanding count is compared.
fn oracle_steps(n: usize) -> Vec<usize> {
    if n <= OUTSTANDING_SAMPLES {
        return (1..=n).collect();
    }
    let mut steps: Vec<usize> = (0..OUTSTANDING_SAMPLES)
        .map(|j| 1 + j * (n - 1) / (OUTSTANDING_SAMPLES - 1))
        .collect();
    steps.dedup();
    steps
}

pub fn check_outstanding_oracle(trace: &RunTrace, run: usize) -> Option<Violation> {
    oracle_steps(trace.horizon).into_iter().find_map(|t| {
        let expected = outstanding_count(&trace.delays, t);
        (trace.outstanding[t - 1] != expected).then(|| {
            violation(
                Check::OutstandingOracle,
                run,
                Some(t),
                format!("engine G_t = {}, brute force = {expected}", trace.outstanding[t - 1]),
            )
        })
    })
}

pub fn check_partition(trace: &RunTrace, run: usize) -> Option<Violation> {
    trace
        .per_action_gap_series()
        .iter()
        .enumerate()
        .find_map(|(i, row)| {
            let sum: usize = row.iter().sum();
            (sum != trace.outstanding[i]).then(|| {
                violation(
                    Check::Partition,
                    run,
                    Some(i + 1),
                    format!("sum of per-action gaps {sum} != G_t {}", trace.outstanding[i]),
                )
            })
        })
}

pub fn check_delivery(trace: &RunTrace, run: usize) -> Option<Violation> {
    let n = trace.horizon;
    let mut seen = vec![false; n];
    for (i, batch) in trace.batches.iter().enumerate() {
        let t = i + 1;
        let fail = |detail: String| Some(violation(Check::DeliveryCompleteness, run, Some(t), detail));
        if batch.arrival_step != t {
            return fail(format!("batch stamped {}", batch.arrival_step));
        }
        if batch.events.windows(2).any(|w| w[0].origin_step >= w[1].origin_step) {
            return fail("batch not sorted by origin step".into());
        }
        for event in &batch.events {
            let s = event.origin_step;
            if s == 0 || s > t || seen[s - 1] {
                return fail(format!("origin {s} delivered out of place"));
            }
            if s + trace.delays[s - 1] as usize != t {
                return fail(format!("origin {s} with delay {} arrived at {t}", trace.delays[s - 1]));
            }
            seen[s - 1] = true;
        }
    }
    let mut undelivered = trace.undelivered.iter();
    for (i, &delivered) in seen.iter().enumerate() {
        let s = i + 1;
        if !delivered {
            let due = s + trace.delays[i] as usize;
            if due <= n || undelivered.next() != Some(&(s, due)) {
                return Some(violation(
                    Check::DeliveryCompleteness,
                    run,
                    Some(s),
                    format!("origin {s} (due {due}) neither delivered nor recorded as pending"),
                ));
            }
        }
    }
    if let Some(&(s, _)) = undelivered.next() {
        return Some(violation(
            Check::DeliveryCompleteness,
            run,
            Some(s),
            format!("origin {s} recorded as pending but was delivered"),
        ));
    }
    None
}

pub fn check_pool_law(trace: &RunTrace, run: usize) -> Option<Violation> {
    let peaks = trace.max_outstanding_series();
    trace
        .diagnostics
        .iter()
        .zip(peaks)
        .enumerate()
        .find_map(|(i, (diag, peak))| match diag.pool_size {
            Some(m) if m == peak + 1 => None,
            got => Some(violation(
                Check::PoolLaw,
                run,
                Some(i + 1),
                format!("pool size {got:?}, expected G*_t + 1 = {}", peak + 1),
            )),
        })
}

pub fn check_qpmd_lemma(output: &RunOutput) -> Option<Violation> {
    let trace = &output.trace;
    let run = output.run_index;
    let n = trace.horizon;
    let (Some(queries), Some(counts)) = (
        output.learner.base_queries,
        output.learner.base_action_counts.as_ref(),
    ) else {
        return Some(violation(Check::QpmdLemma, run, None, "learner reports no base statistics".into()));
    };
    if queries > n {
        return Some(violation(Check::QpmdLemma, run, Some(n), format!("n' = {queries} > n = {n}")));
    }
    let plays = trace.play_counts();
    let peaks = trace.max_per_action_gap();
    for i in 0..trace.num_actions {
        let lag = plays[i] as i64 - counts[i] as i64;
        if lag < 0 || lag > peaks[i] as i64 {
            return Some(violation(
                Check::QpmdLemma,
                run,
                Some(n),
                format!(
                    "arm {i}: T_i(n) - T'_i(n') = {lag} outside [0, G*_i,n = {}]",
                    peaks[i]
                ),
            ));
        }
    }
    None
}

/// Replays run `run` with zero delays and compares it step by step with the
/// non-delayed counterpart learner on the same seeds.
pub fn check_zero_delay(config: &ExperimentConfig, run: usize) -> Result<Option<Violation>> {
    let delayed = run_single_with(config, run, &DelayModel::zero())?;
    let mut env = config.environment.build();
    let mut base = build_undelayed_counterpart(config)?;
    let plain = run_undelayed(
        &mut *env,
        &mut base,
        config.horizon,
        Streams::derive(config.seed, run as u64),
    )?;
    let trace = &delayed.trace;
    let mismatch = (0..config.horizon).find(|&i| {
        trace.actions[i] != plain.actions[i] || trace.rewards[i] != plain.rewards[i]
    });
    Ok(mismatch.map(|i| {
        violation(
            Check::ZeroDelayEquivalence,
            run,
            Some(i + 1),
            format!(
                "delayed learner played {} (reward {}), plain learner {} (reward {})",
                trace.actions[i], trace.rewards[i], plain.actions[i], plain.rewards[i]
            ),
        )
    }))
}

/// Runs every applicable invariant on every run of the experiment.
pub fn validate(config: &ExperimentConfig, jobs: usize) -> Result<ValidationReport> {
    let meta = config.learner.meta;
    let bernoulli = matches!(config.environment, EnvironmentSpec::Bernoulli { .. });
    let applies = |check: Check| match check {
        Check::PoolLaw => meta == MetaKind::Bold,
        Check::QpmdLemma => meta == MetaKind::Qpmd,
        Check::ReorderDistribution => bernoulli,
        _ => true,
    };
    let mut first: Vec<Option<Violation>> = vec![None; Check::ALL.len()];
    let mut record = |v: Option<Violation>| {
        if let Some(v) = v {
            let slot = &mut first[Check::ALL.iter().position(|&c| c == v.check).expect("known check")];
            if slot.is_none() {
                log::debug!("violation: {v}");
                *slot = Some(v);
            }
        }
    };
    let mut feeds = ObservedFeeds::new(config.environment.num_actions());
    let stats = monte_carlo_with(config, jobs, |output| {
        let trace = &output.trace;
        let run = output.run_index;
        record(check_outstanding_oracle(trace, run));
        record(check_partition(trace, run));
        record(check_delivery(trace, run));
        if applies(Check::PoolLaw) {
            record(check_pool_law(trace, run));
        }
        if applies(Check::QpmdLemma) {
            record(check_qpmd_lemma(output));
        }
        if bernoulli {
            feeds.push_trace(trace)?;
        }
        Ok(())
    })?;
    for run in 0..config.runs.min(ZERO_DELAY_RUNS) {
        record(check_zero_delay(config, run)?);
    }
    let reorder = if bernoulli {
        let means = config.environment.means().expect("bernoulli means");
        let report = check_feeds(&feeds, means)?;
        if let Some(arm) = report.first_failure() {
            record(Some(Violation {
                check: Check::ReorderDistribution,
                run: None,
                t: None,
                detail: format!(
                    "arm {}: mean {:.6} vs {} (tol {:.6}), lag-1 autocorrelation {:.6} (tol {:.6}) over {} samples",
                    arm.arm,
                    arm.mean,
                    arm.expected_mean,
                    arm.mean_tolerance,
                    arm.autocorrelation,
                    arm.autocorrelation_tolerance,
                    arm.samples
                ),
            }));
        }
        Some(report)
    } else {
        None
    };
    let checks = Check::ALL
        .iter()
        .zip(first)
        .map(|(&check, violation)| CheckOutcome {
            check,
            status: if !applies(check) {
                Status::Skipped
            } else if violation.is_some() {
                Status::Fail
            } else {
                Status::Pass
            },
            violation,
        })
        .collect();
    Ok(ValidationReport {
        runs: stats.runs,
        checks,
        reorder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn config(meta: &str, base: &str, delay: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(
            &format!(
                r#"{{
                "environment": {{"kind": "bernoulli", "means": [0.6, 0.5, 0.35]}},
                "delay": {delay},
                "learner": {{"meta": "{meta}", "base": "{base}"}},
                "horizon": 400, "runs": 8, "seed": 21 {extra}
            }}"#
            ),
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn oracle_steps_cover_short_runs_and_sample_long_ones() {
        assert_eq!(oracle_steps(5), vec![1, 2, 3, 4, 5]);
        let s = oracle_steps(1000);
        assert_eq!(s.len(), OUTSTANDING_SAMPLES);
        assert_eq!((s[0], *s.last().unwrap()), (1, 1000));
    }

    #[test]
    fn all_learners_validate_under_geometric_delays() {
        let delay = r#"{"kind": "geometric", "mean": 4}"#;
        for (meta, base) in [
            ("none", "ucb1"),
            ("none", "kl-ucb"),
            ("bold", "ucb1"),
            ("bold", "exp3"),
            ("qpmd", "ucb1"),
            ("qpmd", "exp3"),
        ] {
            let report = validate(&config(meta, base, delay, ""), 2).unwrap();
            assert!(report.passed(), "{meta}+{base}: {:?}", report.first_failure());
        }
    }

    #[test]
    fn zero_delay_config_passes_everything() {
        let c = config("qpmd", "kl-ucb", r#"{"kind": "constant", "value": 0}"#, "");
        let report = validate(&c, 1).unwrap();
        assert!(report.passed());
        assert_eq!(report.outcome(Check::PoolLaw).status, Status::Skipped);
        assert_eq!(report.outcome(Check::QpmdLemma).status, Status::Pass);
    }

    #[test]
    fn dropped_feedback_breaks_qpmd_lemma() {
        let c = config(
            "qpmd",
            "ucb1",
            r#"{"kind": "constant", "value": 3}"#,
            r#", "fault_injection": {"drop_feedback_origin": 2}"#,
        );
        let report = validate(&c, 1).unwrap();
        assert!(!report.passed());
        let v = report.first_failure().unwrap();
        assert_eq!(v.check, Check::QpmdLemma);
        assert_eq!(v.run, Some(0));
    }

    #[test]
    fn dropped_feedback_breaks_pool_law() {
        let c = config(
            "bold",
            "exp3",
            r#"{"kind": "constant", "value": 3}"#,
            r#", "fault_injection": {"drop_feedback_origin": 2}"#,
        );
        let v = validate(&c, 1).unwrap().first_failure().cloned().unwrap();
        assert_eq!(v.check, Check::PoolLaw);
        assert_eq!(v.run, Some(0));
        assert!(v.t.is_some());
    }

    #[test]
    fn tampered_trace_is_caught() {
        let c = config("none", "ucb1", r#"{"kind": "constant", "value": 2}"#, "");
        let mut out = crate::labkit::montecarlo::run_single(&c, 0).unwrap();
        assert!(check_delivery(&out.trace, 0).is_none());
        let mut counts = out.trace.clone();
        let t = oracle_steps(counts.horizon)[3];
        counts.outstanding[t - 1] += 1;
        assert_eq!(check_outstanding_oracle(&counts, 0).unwrap().t, Some(t));
        out.trace.delays[5] += 1;
        assert_eq!(check_delivery(&out.trace, 0).unwrap().t, Some(8));
    }
}
