//! Non-delayed base learners and the index arithmetic they share.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;

use crate::environments::FeedbackKind;
use crate::error::{check_index, Error, Result};
use crate::protocol::Payload;
use crate::streams::Stream;

/// Default bisection tolerance for the KL-UCB index.
pub const DEFAULT_KL_TOLERANCE: f64 = 1e-9;

/// A learner for the problem without delays.
///
/// Callers must alternate `predict` and `update`, passing to `update` the
/// action returned by the preceding `predict`.
pub trait BaseLearner: Send {
    fn num_actions(&self) -> usize;

    /// The payload kind `update` understands.
    fn feedback_kind(&self) -> FeedbackKind;

    fn predict(&mut self, rng: &mut Stream) -> usize;

    fn update(&mut self, action: usize, payload: &Payload) -> Result<()>;
}

impl<B: BaseLearner + ?Sized> BaseLearner for Box<B> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn feedback_kind(&self) -> FeedbackKind {
        (**self).feedback_kind()
    }
    fn predict(&mut self, rng: &mut Stream) -> usize {
        (**self).predict(rng)
    }
    fn update(&mut self, action: usize, payload: &Payload) -> Result<()> {
        (**self).update(action, payload)
    }
}

/// Which base learner to build, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BaseSpec {
    Ucb1,
    KlUcb { tolerance: f64 },
    Exp3 { gamma: f64 },
    Hedge { eta: f64 },
}

impl BaseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaseSpec::Ucb1 => "ucb1",
            BaseSpec::KlUcb { .. } => "kl-ucb",
            BaseSpec::Exp3 { .. } => "exp3",
            BaseSpec::Hedge { .. } => "hedge",
        }
    }

    pub fn feedback_kind(&self) -> FeedbackKind {
        match self {
            BaseSpec::Hedge { .. } => FeedbackKind::Full,
            _ => FeedbackKind::Bandit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseSpec::Ucb1 => Ok(()),
            BaseSpec::KlUcb { tolerance } if tolerance > 0.0 => Ok(()),
            BaseSpec::Exp3 { gamma } if gamma > 0.0 && gamma <= 1.0 => Ok(()),
            BaseSpec::Hedge { eta } if eta > 0.0 && eta.is_finite() => Ok(()),
            ref other => Err(Error::InvalidParameter(format!(
                "bad hyperparameter for {}: {other:?}",
                other.name()
            ))),
        }
    }

    pub fn build(&self, num_actions: usize) -> Result<Box<dyn BaseLearner>> {
        self.validate()?;
        Ok(match *self {
            BaseSpec::Ucb1 => Box::new(Ucb1::new(num_actions)),
            BaseSpec::KlUcb { tolerance } => Box::new(KlUcb::new(num_actions, tolerance)?),
            BaseSpec::Exp3 { gamma } => Box::new(Exp3::new(num_actions, gamma)?),
            BaseSpec::Hedge { eta } => Box::new(Hedge::new(num_actions, eta)?),
        })
    }
}

/// `mu_hat + sqrt(2 ln t / s)`, or `+inf` for an unexplored arm.
pub fn ucb1_index(mean_estimate: f64, s: usize, t: f64) -> f64 {
    if s == 0 {
        return f64::INFINITY;
    }
    mean_estimate + (2.0 * t.ln() / s as f64).sqrt()
}

/// KL divergence between Bernoulli(p) and Bernoulli(q), with `0 ln 0 = 0`
/// and `x ln(x / 0) = +inf`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    fn term(x: f64, y: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else if y == 0.0 {
            f64::INFINITY
        } else {
            x * (x / y).ln()
        }
    }
    if p == q {
        return 0.0;
    }
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// `d+(x, y) = d(x, y) 1{x < y}`.
pub fn bernoulli_kl_plus(x: f64, y: f64) -> f64 {
    if x < y {
        bernoulli_kl(x, y)
    } else {
        0.0
    }
}

/// Exploration budget `ln t + 3 ln(max(ln t, 1))`, clamped at zero.
pub fn kl_threshold(t: f64) -> f64 {
    let log_t = t.ln();
    (log_t + 3.0 * log_t.max(1.0).ln()).max(0.0)
}

/// Largest `q` in `[mu_hat, 1]` with `s d(mu_hat, q) <= kl_threshold(t)`, by bisection.
///
/// The result `q` satisfies the constraint itself, and either `q = 1` or
/// `q + tolerance` violates it.
pub fn kl_ucb_index(mean_estimate: f64, s: usize, t: f64, tolerance: f64) -> Result<f64> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bisection tolerance must be positive, got {tolerance}"
        )));
    }
    if s == 0 {
        return Ok(f64::INFINITY);
    }
    let budget = kl_threshold(t) / s as f64;
    if budget <= 0.0 {
        return Ok(mean_estimate);
    }
    if mean_estimate >= 1.0 || bernoulli_kl(mean_estimate, 1.0) <= budget {
        return Ok(1.0);
    }
    let mut lo = mean_estimate;
    let mut hi = 1.0;
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(mean_estimate, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Argmax with ties to the lowest index.
pub fn index_select(indices: &[f64]) -> Result<usize> {
    let (first, rest) = indices.split_first().ok_or(Error::EmptyIndices)?;
    let mut best = 0;
    let mut best_value = *first;
    for (i, &v) in rest.iter().enumerate() {
        if v > best_value {
            best = i + 1;
            best_value = v;
        }
    }
    Ok(best)
}

/// Running reward average of one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ArmEstimate {
    pub pulls: usize,
    pub reward_sum: f64,
}

impl ArmEstimate {
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.reward_sum / self.pulls as f64
        }
    }

    pub fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
    }
}

fn bandit_reward(payload: &Payload) -> Result<f64> {
    let reward = payload.reward().ok_or_else(|| {
        Error::ProtocolViolation("bandit learner received a full-information payload".into())
    })?;
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::InvalidParameter(format!(
            "reward {reward} is outside [0, 1]"
        )));
    }
    Ok(reward)
}

/// UCB1 on its own internal clock.
#[derive(Debug, Clone)]
pub struct Ucb1 {
    arms: Vec<ArmEstimate>,
    t: usize,
}

impl Ucb1 {
    pub fn new(num_actions: usize) -> Self {
        Ucb1 {
            arms: vec![ArmEstimate::default(); num_actions],
            t: 0,
        }
    }

    pub fn arms(&self) -> &[ArmEstimate] {
        &self.arms
    }
}

impl BaseLearner for Ucb1 {
    fn num_actions(&self) -> usize {
        self.arms.len()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        FeedbackKind::Bandit
    }

    fn predict(&mut self, _rng: &mut Stream) -> usize {
        self.t += 1;
        let t = self.t as f64;
        let indices: Vec<f64> = self
            .arms
            .iter()
            .map(|a| ucb1_index(a.mean(), a.pulls, t))
            .collect();
        index_select(&indices).expect("at least one arm")
    }

    fn update(&mut self, action: usize, payload: &Payload) -> Result<()> {
        check_index("action", action, self.arms.len())?;
        let reward = bandit_reward(payload)?;
        self.arms[action].record(reward);
        Ok(())
    }
}

/// KL-UCB for Bernoulli rewards on its own internal clock.
#[derive(Debug, Clone)]
pub struct KlUcb {
    arms: Vec<ArmEstimate>,
    t: usize,
    tolerance: f64,
}

impl KlUcb {
    pub fn new(num_actions: usize, tolerance: f64) -> Result<Self> {
        if tolerance.is_nan() || tolerance <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "bisection tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(KlUcb {
            arms: vec![ArmEstimate::default(); num_actions],
            t: 0,
            tolerance,
        })
    }
}

impl BaseLearner for KlUcb {
    fn num_actions(&self) -> usize {
        self.arms.len()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        FeedbackKind::Bandit
    }

    fn predict(&mut self, _rng: &mut Stream) -> usize {
        self.t += 1;
        let t = self.t as f64;
        let indices: Vec<f64> = self
            .arms
            .iter()
            .map(|a| kl_ucb_index(a.mean(), a.pulls, t, self.tolerance).expect("tolerance checked"))
            .collect();
        index_select(&indices).expect("at least one arm")
    }

    fn update(&mut self, action: usize, payload: &Payload) -> Result<()> {
        check_index("action", action, self.arms.len())?;
        let reward = bandit_reward(payload)?;
        self.arms[action].record(reward);
        Ok(())
    }
}

/// Normalized `exp(log_weights)`.
fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let top = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_weights.iter().map(|w| (w - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn sample_from(probabilities: &[f64], rng: &mut Stream) -> usize {
    WeightedIndex::new(probabilities)
        .expect("probabilities are finite and nonnegative")
        .sample(rng)
}

/// EXP3 with importance-weighted reward estimates.
///
/// Weights are kept in log space so that long runs never overflow; an update
/// touches exactly one log-weight.
#[derive(Debug, Clone)]
pub struct Exp3 {
    log_weights: Vec<f64>,
    gamma: f64,
}

impl Exp3 {
    pub fn new(num_actions: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "EXP3 gamma must lie in (0, 1], got {gamma}"
            )));
        }
        if num_actions == 0 {
            return Err(Error::InvalidParameter("EXP3 needs at least one action".into()));
        }
        Ok(Exp3 {
            log_weights: vec![0.0; num_actions],
            gamma,
        })
    }

    /// `p_a = (1 - gamma) w_a / sum w + gamma / K`.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.log_weights.len() as f64;
        softmax(&self.log_weights)
            .into_iter()
            .map(|p| (1.0 - self.gamma) * p + self.gamma / k)
            .collect()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn observe(&mut self, action: usize, reward: f64) -> Result<()> {
        check_index("action", action, self.log_weights.len())?;
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::InvalidParameter(format!(
                "reward {reward} is outside [0, 1]"
            )));
        }
        let p = self.probabilities()[action];
        let estimate = reward / p;
        self.log_weights[action] += self.gamma * estimate / self.log_weights.len() as f64;
        Ok(())
    }

    /// Applies the pending observation, if any, then draws the next action.
    pub fn step(&mut self, observed: Option<(usize, f64)>, rng: &mut Stream) -> Result<usize> {
        if let Some((action, reward)) = observed {
            self.observe(action, reward)?;
        }
        Ok(sample_from(&self.probabilities(), rng))
    }
}

impl BaseLearner for Exp3 {
    fn num_actions(&self) -> usize {
        self.log_weights.len()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        FeedbackKind::Bandit
    }

    fn predict(&mut self, rng: &mut Stream) -> usize {
        sample_from(&self.probabilities(), rng)
    }

    fn update(&mut self, action: usize, payload: &Payload) -> Result<()> {
        let reward = payload.reward().ok_or_else(|| {
            Error::ProtocolViolation("EXP3 received a full-information payload".into())
        })?;
        self.observe(action, reward)
    }
}

/// Hedge (exponential weights) for full-information feedback; losses are `1 - reward`.
#[derive(Debug, Clone)]
pub struct Hedge {
    log_weights: Vec<f64>,
    eta: f64,
}

impl Hedge {
    pub fn new(num_actions: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Hedge learning rate must be positive, got {eta}"
            )));
        }
        if num_actions == 0 {
            return Err(Error::InvalidParameter("Hedge needs at least one action".into()));
        }
        Ok(Hedge {
            log_weights: vec![0.0; num_actions],
            eta,
        })
    }

    /// Starts from explicit (positive) weights.
    pub fn with_weights(weights: &[f64], eta: f64) -> Result<Self> {
        let mut hedge = Hedge::new(weights.len(), eta)?;
        if weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::InvalidParameter("Hedge weights must be positive".into()));
        }
        hedge.log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(hedge)
    }

    pub fn distribution(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }

    /// `w_a <- w_a exp(-eta loss_a)`, then returns the normalized distribution.
    pub fn step(&mut self, losses: &[f64]) -> Result<Vec<f64>> {
        if losses.len() != self.log_weights.len() {
            return Err(Error::LengthMismatch {
                what: "loss vector",
                got: losses.len(),
                expected: self.log_weights.len(),
            });
        }
        if let Some(bad) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidParameter(format!(
                "loss {bad} is outside [0, 1]"
            )));
        }
        for (w, loss) in self.log_weights.iter_mut().zip(losses) {
            *w -= self.eta * loss;
        }
        Ok(self.distribution())
    }
}

impl BaseLearner for Hedge {
    fn num_actions(&self) -> usize {
        self.log_weights.len()
    }

    fn feedback_kind(&self) -> FeedbackKind {
        FeedbackKind::Full
    }

    fn predict(&mut self, rng: &mut Stream) -> usize {
        sample_from(&self.distribution(), rng)
    }

    fn update(&mut self, _action: usize, payload: &Payload) -> Result<()> {
        match payload {
            Payload::Vector(rewards) => {
                let losses: Vec<f64> = rewards.iter().map(|r| 1.0 - r).collect();
                self.step(&losses).map(|_| ())
            }
            Payload::Reward(_) => Err(Error::ProtocolViolation(
                "Hedge needs full-information feedback".into(),
            )),
        }
    }
}
