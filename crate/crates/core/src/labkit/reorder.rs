//! Distribution check on the per-arm feedback streams a learner observes.

use serde::Serialize;

use crate::error::{check_index, Error, Result};
use crate::protocol::RunTrace;

/// Fewer pooled samples than this per arm gives an inconclusive verdict.
pub const MIN_SAMPLES: usize = 100;

/// Per-arm rewards in the order they reached the learner, one list per run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedFeeds {
    /// `feeds[i][r]` is the arrival-ordered reward sequence of arm `i` in run `r`.
    pub feeds: Vec<Vec<Vec<f64>>>,
}

impl ObservedFeeds {
    pub fn new(num_actions: usize) -> Self {
        ObservedFeeds {
            feeds: vec![Vec::new(); num_actions],
        }
    }

    /// Appends the delivered feedback of one run.
    pub fn push_trace(&mut self, trace: &RunTrace) -> Result<()> {
        if trace.num_actions != self.feeds.len() {
            return Err(Error::LengthMismatch {
                what: "trace action count",
                got: trace.num_actions,
                expected: self.feeds.len(),
            });
        }
        let mut run = vec![Vec::new(); self.feeds.len()];
        for batch in &trace.batches {
            for event in &batch.events {
                let action = trace.actions[event.origin_step - 1];
                let reward = event.payload.reward().ok_or_else(|| {
                    Error::InvalidParameter("reorder check needs scalar rewards".into())
                })?;
                run[action].push(reward);
            }
        }
        for (arm, seq) in self.feeds.iter_mut().zip(run) {
            arm.push(seq);
        }
        Ok(())
    }

    pub fn from_traces<'a, I: IntoIterator<Item = &'a RunTrace>>(
        num_actions: usize,
        traces: I,
    ) -> Result<Self> {
        let mut feeds = ObservedFeeds::new(num_actions);
        for trace in traces {
            feeds.push_trace(trace)?;
        }
        Ok(feeds)
    }

    pub fn count(&self, arm: usize) -> usize {
        self.feeds[arm].iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub arm: usize,
    pub samples: usize,
    pub mean: f64,
    pub expected_mean: f64,
    pub mean_tolerance: f64,
    /// Lag-1 sample autocorrelation, pooled over runs.
    pub autocorrelation: f64,
    pub autocorrelation_tolerance: f64,
    pub mean_ok: bool,
    pub autocorrelation_ok: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReorderReport {
    pub arms: Vec<ArmReport>,
}

impl ReorderReport {
    /// True when no arm failed (inconclusive arms are not failures).
    pub fn passed(&self) -> bool {
        self.arms.iter().all(|a| a.verdict != Verdict::Fail)
    }

    pub fn first_failure(&self) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.verdict == Verdict::Fail)
    }
}

/// Checks each arm's observed stream against Bernoulli(`means[i]`):
/// pooled mean within 4 binomial standard deviations and lag-1
/// autocorrelation within `4 / sqrt(N)` of zero.
pub fn check_feeds(feeds: &ObservedFeeds, means: &[f64]) -> Result<ReorderReport> {
    if feeds.feeds.len() != means.len() {
        return Err(Error::LengthMismatch {
            what: "arm means",
            got: means.len(),
            expected: feeds.feeds.len(),
        });
    }
    let arms = means
        .iter()
        .enumerate()
        .map(|(arm, &mu)| arm_report(arm, &feeds.feeds[arm], mu))
        .collect();
    Ok(ReorderReport { arms })
}

fn arm_report(arm: usize, runs: &[Vec<f64>], mu: f64) -> ArmReport {
    let samples: usize = runs.iter().map(Vec::len).sum();
    let n = samples as f64;
    let mean = if samples == 0 {
        f64::NAN
    } else {
        runs.iter().flatten().sum::<f64>() / n
    };
    let mean_tolerance = 4.0 * (mu * (1.0 - mu) / n).sqrt();
    let denominator: f64 = runs.iter().flatten().map(|x| (x - mean).powi(2)).sum();
    let numerator: f64 = runs
        .iter()
        .flat_map(|r| r.windows(2))
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    let autocorrelation = if denominator > 0.0 {
        numerator / denominator
    } else {
        0.0
    };
    let autocorrelation_tolerance = 4.0 / n.sqrt();
    let mean_ok = if mean_tolerance > 0.0 {
        (mean - mu).abs() <= mean_tolerance
    } else {
        mean == mu
    };
    let autocorrelation_ok = autocorrelation.abs() <= autocorrelation_tolerance;
    let verdict = if samples < MIN_SAMPLES {
        Verdict::Inconclusive
    } else if mean_ok && autocorrelation_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    ArmReport {
        arm,
        samples,
        mean,
        expected_mean: mu,
        mean_tolerance,
        autocorrelation,
        autocorrelation_tolerance,
        mean_ok,
        autocorrelation_ok,
        verdict,
    }
}

/// Collects the observed feeds of `traces` and checks them against `means`.
pub fn reorder_distribution_check<'a, I>(traces: I, means: &[f64]) -> Result<ReorderReport>
where
    I: IntoIterator<Item = &'a RunTrace>,
{
    let feeds = ObservedFeeds::from_traces(means.len(), traces)?;
    check_feeds(&feeds, means)
}

/// Rewrites one arm's feed of one run, for constructing counterexamples.
pub fn rig_feed<F: FnOnce(&mut Vec<f64>)>(
    feeds: &mut ObservedFeeds,
    arm: usize,
    run: usize,
    rig: F,
) -> Result<()> {
    check_index("arm", arm, feeds.feeds.len())?;
    check_index("run", run, feeds.feeds[arm].len())?;
    rig(&mut feeds.feeds[arm][run]);
    Ok(())
}
