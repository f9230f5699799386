//! Delayed-UCB1 and Delayed-KL-UCB: the usual index policies computed from
//! the rewards observed so far, `a_t = argmax_i B(i, S_i(t-1), t)`.

use serde::{Deserialize, Serialize};

use crate::base::{index_select, kl_ucb_index, ucb1_index, DEFAULT_KL_TOLERANCE};
use crate::error::{Error, Result};
use crate::protocol::{FeedbackBatch, Learner, StepDiagnostics};
use crate::streams::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Ucb1,
    KlUcb,
}

/// Book-keeping for one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ArmLedger {
    /// `T_i`: times played.
    pub plays: usize,
    /// `S_i`: rewards received.
    pub observed: usize,
    pub reward_sum: f64,
    pub mean_estimate: f64,
}

impl ArmLedger {
    /// Plays whose reward is still in flight (`G_{i,t}`).
    pub fn in_flight(&self) -> usize {
        self.plays - self.observed
    }

    pub fn observe(&mut self, reward: f64) -> Result<()> {
        if self.observed >= self.plays {
            return Err(Error::ProtocolViolation(format!(
                "arm would have {} observations for {} plays",
                self.observed + 1,
                self.plays
            )));
        }
        self.observed += 1;
        self.reward_sum += reward;
        self.mean_estimate = self.reward_sum / self.observed as f64;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DelayedUcb {
    arms: Vec<ArmLedger>,
    kind: IndexKind,
    tolerance: f64,
}

impl DelayedUcb {
    pub fn new(num_actions: usize, kind: IndexKind) -> Self {
        DelayedUcb {
            arms: vec![ArmLedger::default(); num_actions],
            kind,
            tolerance: DEFAULT_KL_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if tolerance.is_nan() || tolerance <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "bisection tolerance must be positive, got {tolerance}"
            )));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn ledger(&self) -> &[ArmLedger] {
        &self.arms
    }

    /// Indices for step `t` from the current ledger.
    pub fn indices(&self, t: usize) -> Vec<f64> {
        let t = t as f64;
        self.arms
            .iter()
            .map(|arm| match self.kind {
                IndexKind::Ucb1 => ucb1_index(arm.mean_estimate, arm.observed, t),
                IndexKind::KlUcb => {
                    kl_ucb_index(arm.mean_estimate, arm.observed, t, self.tolerance)
                        .expect("tolerance checked at construction")
                }
            })
            .collect()
    }

    /// Index argmax at step `t`; counts the play.
    pub fn choose(&mut self, t: usize) -> usize {
        let action = index_select(&self.indices(t)).expect("at least one arm");
        self.arms[action].plays += 1;
        action
    }
}

impl Learner for DelayedUcb {
    fn num_actions(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, t: usize, _rng: &mut Stream) -> Result<usize> {
        Ok(self.choose(t))
    }

    fn absorb(&mut self, batch: &FeedbackBatch, actions: &[usize]) -> Result<()> {
        for event in &batch.events {
            let action = actions[event.origin_step - 1];
            let reward = event.payload.reward().ok_or_else(|| {
                Error::ProtocolViolation("index policies need bandit feedback".into())
            })?;
            self.arms[action].observe(reward)?;
        }
        Ok(())
    }

    fn diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics::default()
    }
}
