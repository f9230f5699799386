//! Outcome generators and delay processes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::protocol::Payload;
use crate::streams::Stream;

/// What a learner gets to see after playing an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    /// Only the realized reward of the played action.
    Bandit,
    /// The whole reward vector of the step.
    Full,
}

/// Result of playing one action against an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub payload: Payload,
}

/// An environment answers one action per step with a reward and a feedback payload.
pub trait Environment {
    fn num_actions(&self) -> usize;

    fn feedback_kind(&self) -> FeedbackKind;

    /// Plays `action` at step `t` (1-based). Randomness comes only from `rng`.
    fn respond(&mut self, t: usize, action: usize, rng: &mut Stream) -> Result<Outcome>;
}

/// Stochastic bandit with independent Bernoulli arms.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliBandit {
    means: Vec<f64>,
}

impl BernoulliBandit {
    pub fn new(means: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidParameter(
                "a bandit needs at least one arm".into(),
            ));
        }
        if let Some(bad) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::InvalidParameter(format!(
                "arm mean {bad} is outside [0, 1]"
            )));
        }
        Ok(BernoulliBandit { means })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Draws one reward for `action`, consuming exactly one value from `rng`.
    pub fn pull(&self, action: usize, rng: &mut Stream) -> Result<f64> {
        check_index("action", action, self.means.len())?;
        let u: f64 = rng.random();
        Ok(if u < self.means[action] { 1.0 } else { 0.0 })
    }

    /// Gaps `max_j mu_j - mu_i`; the best arm gets exactly zero.
    pub fn gaps(&self) -> Vec<f64> {
        action_gaps(&self.means)
    }
}

impl Environment for BernoulliBandit {
    fn num_actions(&self) -> usize {
        self.means.len()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        FeedbackKind::Bandit
    }

    fn respond(&mut self, _t: usize, action: usize, rng: &mut Stream) -> Result<Outcome> {
        let reward = self.pull(action, rng)?;
        Ok(Outcome {
            reward,
            payload: Payload::Reward(reward),
        })
    }
}

pub fn action_gaps(means: &[f64]) -> Vec<f64> {
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    means.iter().map(|&m| best - m).collect()
}

/// An oblivious reward sequence: `n` rows, one column per action, fixed before the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    rows: Vec<Vec<f64>>,
    num_actions: usize,
}

impl RewardMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_actions = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || num_actions == 0 {
            return Err(Error::InvalidParameter("reward matrix is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::LengthMismatch {
                    what: "reward matrix row",
                    got: row.len(),
                    expected: num_actions,
                });
            }
            if let Some(bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidParameter(format!(
                    "reward {bad} in row {} is outside [0, 1]",
                    i + 1
                )));
            }
        }
        Ok(RewardMatrix { rows, num_actions })
    }

    /// Reads a headerless CSV file: one row per step, one column per action.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("line {}: bad number {cell:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Row of step `t` (1-based).
    pub fn row(&self, t: usize) -> Result<&[f64]> {
        if t == 0 || t > self.rows.len() {
            return Err(Error::OutOfRange {
                what: "step",
                index: t,
                len: self.rows.len(),
            });
        }
        Ok(&self.rows[t - 1])
    }

    /// Reward of `action` at step `t` (1-based).
    pub fn reward(&self, t: usize, action: usize) -> Result<f64> {
        let row = self.row(t)?;
        check_index("action", action, row.len())?;
        Ok(row[action])
    }

    /// Best fixed action over the first `upto` steps; ties go to the lowest index.
    pub fn best_fixed_action_upto(&self, upto: usize) -> (usize, f64) {
        let mut totals = vec![0.0; self.num_actions];
        for row in self.rows.iter().take(upto) {
            for (total, r) in totals.iter_mut().zip(row) {
                *total += r;
            }
        }
        let mut best = 0;
        for (a, &total) in totals.iter().enumerate() {
            if total > totals[best] {
                best = a;
            }
        }
        (best, totals[best])
    }

    pub fn best_fixed_action(&self) -> (usize, f64) {
        self.best_fixed_action_upto(self.rows.len())
    }
}

/// Adversarial environment backed by a [`RewardMatrix`].
#[derive(Debug, Clone)]
pub struct MatrixEnvironment {
    matrix: RewardMatrix,
    feedback: FeedbackKind,
}

impl MatrixEnvironment {
    pub fn new(matrix: RewardMatrix, feedback: FeedbackKind) -> Self {
        MatrixEnvironment { matrix, feedback }
    }

    pub fn matrix(&self) -> &RewardMatrix {
        &self.matrix
    }
}

impl Environment for MatrixEnvironment {
    fn num_actions(&self) -> usize {
        self.matrix.num_actions()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        self.feedback
    }

    fn respond(&mut self, t: usize, action: usize, _rng: &mut Stream) -> Result<Outcome> {
        let reward = self.matrix.reward(t, action)?;
        let payload = match self.feedback {
            FeedbackKind::Bandit => Payload::Reward(reward),
            FeedbackKind::Full => Payload::Vector(self.matrix.row(t)?.to_vec()),
        };
        Ok(Outcome { reward, payload })
    }
}

/// Sampler for the delay of each step's feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Constant { value: u64 },
    /// Number of failures before the first success, with the given mean.
    Geometric { mean: f64 },
    /// Integer uniform on `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// Uniform over the listed values.
    Empirical { values: Vec<u64> },
    /// Delegates to a sub-model keyed by the played action.
    PerAction { models: BTreeMap<usize, DelayModel> },
}

impl DelayModel {
    pub fn zero() -> Self {
        DelayModel::Constant { value: 0 }
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        match self {
            DelayModel::Constant { .. } => Ok(()),
            DelayModel::Geometric { mean } => {
                if mean.is_finite() && *mean > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "geometric delay mean must be positive, got {mean}"
                    )))
                }
            }
            DelayModel::Uniform { lo, hi } => {
                if lo <= hi {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "uniform delay needs lo <= hi, got {lo} > {hi}"
                    )))
                }
            }
            DelayModel::Empirical { values } => {
                if values.is_empty() {
                    Err(Error::InvalidParameter("empirical delay list is empty".into()))
                } else {
                    Ok(())
                }
            }
            DelayModel::PerAction { models } => {
                for action in 0..num_actions {
                    match models.get(&action) {
                        Some(DelayModel::PerAction { .. }) => {
                            return Err(Error::InvalidParameter(
                                "per-action delay models cannot be nested".into(),
                            ))
                        }
                        Some(m) => m.validate(num_actions)?,
                        None => {
                            return Err(Error::InvalidParameter(format!(
                                "no delay model for action {action}"
                            )))
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// True when the delay distribution does not depend on the action.
    pub fn is_action_independent(&self) -> bool {
        !matches!(self, DelayModel::PerAction { .. })
    }

    /// Expected delay, if the model is action independent.
    pub fn mean(&self) -> Option<f64> {
        match self {
            DelayModel::Constant { value } => Some(*value as f64),
            DelayModel::Geometric { mean } => Some(*mean),
            DelayModel::Uniform { lo, hi } => Some((*lo as f64 + *hi as f64) / 2.0),
            DelayModel::Empirical { values } => {
                Some(values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64)
            }
            DelayModel::PerAction { .. } => None,
        }
    }

    /// Largest value the model can produce, if bounded.
    pub fn max_delay(&self) -> Option<u64> {
        match self {
            DelayModel::Constant { value } => Some(*value),
            DelayModel::Geometric { .. } => None,
            DelayModel::Uniform { hi, .. } => Some(*hi),
            DelayModel::Empirical { values } => values.iter().copied().max(),
            DelayModel::PerAction { models } => models
                .values()
                .map(DelayModel::max_delay)
                .try_fold(0, |acc, m| m.map(|m| acc.max(m))),
        }
    }

    /// Samples the delay of the feedback produced by playing `action` at step `t`.
    pub fn sample(&self, _t: usize, action: usize, rng: &mut Stream) -> u64 {
        match self {
            DelayModel::Constant { value } => *value,
            DelayModel::Geometric { mean } => {
                let p = 1.0 / (mean + 1.0);
                Geometric::new(p)
                    .expect("validated geometric mean")
                    .sample(rng)
            }
            DelayModel::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            DelayModel::Empirical { values } => values[rng.random_range(0..values.len())],
            DelayModel::PerAction { models } => models
                .get(&action)
                .expect("validated per-action delay model")
                .sample(_t, action, rng),
        }
    }
}
