//! Regret accounting: pseudo-regret for stochastic runs, realized regret
//! against the best fixed action for adversarial ones.

use crate::environments::{action_gaps, RewardMatrix};
use crate::error::{Error, Result};
use crate::protocol::RunTrace;

/// `sum_i (max mu - mu_i) T_i(n)`.
pub fn pseudo_regret(play_counts: &[f64], means: &[f64]) -> Result<f64> {
    if play_counts.len() != means.len() {
        return Err(Error::LengthMismatch {
            what: "play counts",
            got: play_counts.len(),
            expected: means.len(),
        });
    }
    Ok(action_gaps(means)
        .iter()
        .zip(play_counts)
        .map(|(gap, count)| gap * count)
        .sum())
}

/// Cumulative pseudo-regret after each step.
pub fn pseudo_regret_curve(actions: &[usize], means: &[f64]) -> Vec<f64> {
    let gaps = action_gaps(means);
    actions
        .iter()
        .scan(0.0, |total, &a| {
            *total += gaps[a];
            Some(*total)
        })
        .collect()
}

fn check_dims(trace: &RunTrace, matrix: &RewardMatrix) -> Result<()> {
    if trace.num_actions != matrix.num_actions() {
        return Err(Error::LengthMismatch {
            what: "trace action count",
            got: trace.num_actions,
            expected: matrix.num_actions(),
        });
    }
    if trace.horizon > matrix.horizon() {
        return Err(Error::LengthMismatch {
            what: "trace horizon",
            got: trace.horizon,
            expected: matrix.horizon(),
        });
    }
    Ok(())
}

/// Best fixed action's total minus the learner's total over the trace.
pub fn realized_regret(trace: &RunTrace, matrix: &RewardMatrix) -> Result<f64> {
    check_dims(trace, matrix)?;
    let (_, best) = matrix.best_fixed_action_upto(trace.horizon);
    let mut earned = 0.0;
    for (t, &a) in trace.actions.iter().enumerate() {
        earned += matrix.reward(t + 1, a)?;
    }
    Ok(best - earned)
}

/// Realized regret after each step, against the best fixed action of each prefix.
pub fn realized_regret_curve(trace: &RunTrace, matrix: &RewardMatrix) -> Result<Vec<f64>> {
    check_dims(trace, matrix)?;
    let mut totals = vec![0.0; matrix.num_actions()];
    let mut earned = 0.0;
    let mut curve = Vec::with_capacity(trace.horizon);
    for (t, &a) in trace.actions.iter().enumerate() {
        let row = matrix.row(t + 1)?;
        for (total, r) in totals.iter_mut().zip(row) {
            *total += r;
        }
        earned += row[a];
        let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        curve.push(best - earned);
    }
    Ok(curve)
}
