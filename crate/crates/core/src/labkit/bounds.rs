//! Closed-form regret and outstanding-feedback bounds.
//!
//! Every bound is a plain function of its parameters; [`BoundKind`] ties them
//! to an experiment so they can be evaluated pointwise along the horizon.

use serde::Serialize;

use crate::base::{bernoulli_kl, BaseSpec};
use crate::config::{ExperimentConfig, MetaKind};
use crate::environments::action_gaps;
use crate::error::{Error, Result};

/// `B(n, t) = t + 2 ln n + sqrt(4 t ln n)`: high-probability budget on the
/// outstanding-feedback count under i.i.d. delays with mean `t`.
pub fn bernstein_budget(n: f64, mean_delay: f64) -> f64 {
    let log_n = n.ln();
    mean_delay + 2.0 * log_n + (4.0 * mean_delay * log_n).sqrt()
}

/// Upper bound on `E[G*_n]` for i.i.d. delays: `B(n, E[tau]) + 1`.
pub fn outstanding_bound(n: f64, mean_delay: f64) -> f64 {
    bernstein_budget(n, mean_delay) + 1.0
}

/// `(g + 1) f(n / (g + 1))` for a base bound `f` that is nondecreasing,
/// concave and vanishes at zero.
pub fn bold_regret_bound<F: Fn(f64) -> f64>(f_base: F, g_star_mean: f64, n: f64) -> Result<f64> {
    if g_star_mean.is_nan() || g_star_mean < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mean peak outstanding count must be nonnegative, got {g_star_mean}"
        )));
    }
    let m = g_star_mean + 1.0;
    Ok(m * f_base(n / m))
}

/// BOLD bound with `E[G*_n]` replaced by its i.i.d.-delay budget:
/// `(B + 2) f(n / (B + 2))`.
pub fn bold_iid_regret_bound<F: Fn(f64) -> f64>(f_base: F, n: f64, mean_delay: f64) -> f64 {
    let m = bernstein_budget(n, mean_delay) + 2.0;
    m * f_base(n / m)
}

fn check_lengths(gaps: usize, other: usize, what: &'static str) -> Result<()> {
    if gaps == other {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            got: other,
            expected: gaps,
        })
    }
}

/// `sum_{gap > 0} [8 ln n / gap + 3.5 gap] + sum_i gap_i E[G*_{i,n}]`.
pub fn ucb1_regret_bound(n: f64, gaps: &[f64], g_star_means: &[f64]) -> Result<f64> {
    check_lengths(gaps.len(), g_star_means.len(), "per-arm peak outstanding")?;
    if gaps.iter().any(|&g| g < 0.0) {
        return Err(Error::InvalidParameter("gaps must be nonnegative".into()));
    }
    let log_n = n.ln();
    let leading: f64 = gaps
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| 8.0 * log_n / g + 3.5 * g)
        .sum();
    let penalty: f64 = gaps.iter().zip(g_star_means).map(|(g, s)| g * s).sum();
    Ok(leading + penalty)
}

/// Constants of the KL-UCB bound. `c2` and `beta` exist but have no
/// closed form, so they are caller-supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlUcbConstants {
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
}

impl Default for KlUcbConstants {
    fn default() -> Self {
        KlUcbConstants {
            epsilon: 0.0,
            c1: 10.0,
            c2: 0.0,
            beta: 0.0,
        }
    }
}

/// `ln ln n`, with the inner logarithm clamped at 1 for `n < e`.
fn log_log(n: f64) -> f64 {
    n.ln().max(1.0).ln()
}

/// Delayed KL-UCB bound:
/// `sum_{gap>0} gap [(ln n / d(mu_i, mu*)) (1 + eps) + C1 ln ln n]
///  + sum_i gap_i [(C2 / n^beta) E[G*_i] + E[G*_i] + 1]`.
pub fn klucb_regret_bound(
    n: f64,
    means: &[f64],
    epsilon: f64,
    g_star_means: &[f64],
    constants: &KlUcbConstants,
) -> Result<f64> {
    check_lengths(means.len(), g_star_means.len(), "per-arm peak outstanding")?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_n = n.ln();
    let mut total = 0.0;
    for ((&mean, gap), &g_star) in means.iter().zip(action_gaps(means)).zip(g_star_means) {
        if gap > 0.0 {
            let d = bernoulli_kl(mean, best);
            total += gap * (log_n / d * (1.0 + epsilon) + constants.c1 * log_log(n));
        }
        total += gap * (constants.c2 / n.powf(constants.beta) * g_star + g_star + 1.0);
    }
    Ok(total)
}

/// Non-delayed UCB1 bound `sum_{gap>0} [8 ln n / gap + (1 + pi^2/3) gap]`.
pub fn ucb1_base_bound(n: f64, gaps: &[f64]) -> f64 {
    let c = 1.0 + std::f64::consts::PI.powi(2) / 3.0;
    gaps.iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| 8.0 * n.ln() / g + c * g)
        .sum()
}

/// Non-delayed KL-UCB bound (the delayed one without the delay terms).
pub fn klucb_base_bound(n: f64, means: &[f64], constants: &KlUcbConstants) -> f64 {
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    means
        .iter()
        .zip(action_gaps(means))
        .filter(|(_, gap)| *gap > 0.0)
        .map(|(&mean, gap)| {
            gap * (n.ln() / bernoulli_kl(mean, best) * (1.0 + constants.epsilon)
                + constants.c1 * log_log(n)
                + constants.c2 / n.powf(constants.beta))
        })
        .sum()
}

/// EXP3 with tuned exploration: `2 sqrt((e - 1) m K ln K)`.
pub fn exp3_base_bound(m: f64, num_actions: usize) -> f64 {
    let k = num_actions as f64;
    2.0 * ((std::f64::consts::E - 1.0) * m * k * k.ln()).sqrt()
}

/// Hedge with tuned learning rate: `sqrt(m ln K)`.
pub fn hedge_base_bound(m: f64, num_actions: usize) -> f64 {
    (m * (num_actions as f64).ln()).sqrt()
}

/// A bound evaluated at every step `t = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurve {
    pub label: String,
    /// `values[t - 1]` is the bound at step `t`.
    pub values: Vec<f64>,
    pub parameters: Vec<(String, f64)>,
}

/// The bounds an experiment can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    /// `E[G*_t] <= B(t, E[tau]) + 1`.
    Outstanding,
    /// BOLD regret in terms of the measured `E[G*_t]`.
    Bold,
    /// BOLD regret with `E[G*_t]` replaced by the i.i.d. budget.
    BoldIid,
    /// QPM-D: base regret plus `sum_i gap_i E[G*_{i,t}]`.
    Qpmd,
    DelayedUcb1,
    DelayedKlUcb,
}

impl BoundKind {
    pub const NAMES: [&'static str; 6] = [
        "outstanding",
        "bold",
        "bold-iid",
        "qpmd",
        "delayed-ucb1",
        "delayed-klucb",
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Outstanding => "outstanding",
            BoundKind::Bold => "bold",
            BoundKind::BoldIid => "bold-iid",
            BoundKind::Qpmd => "qpmd",
            BoundKind::DelayedUcb1 => "delayed-ucb1",
            BoundKind::DelayedKlUcb => "delayed-klucb",
        }
    }

    /// Accepts the canonical names and the numbered aliases used by older configs.
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "outstanding" | "lemma-gstar" => BoundKind::Outstanding,
            "bold" | "theorem1" => BoundKind::Bold,
            "bold-iid" | "corollary1" => BoundKind::BoldIid,
            "qpmd" | "theorem3" => BoundKind::Qpmd,
            "delayed-ucb1" | "theorem4" => BoundKind::DelayedUcb1,
            "delayed-klucb" | "theorem5" => BoundKind::DelayedKlUcb,
            _ => return None,
        })
    }

    /// True when the bound is on the peak outstanding count rather than regret.
    pub fn bounds_outstanding(self) -> bool {
        self == BoundKind::Outstanding
    }

    pub fn check_applicable(self, config: &ExperimentConfig) -> Result<(), String> {
        let learner = &config.learner;
        let stochastic = config.environment.means().is_some();
        let need = |ok: bool, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(format!("bound `{}` {why}", self.name()))
            }
        };
        match self {
            BoundKind::Outstanding => need(
                config.delay.is_action_independent(),
                "needs an action-independent delay model",
            ),
            BoundKind::Bold => need(
                learner.meta == MetaKind::Bold
                    && matches!(learner.base, BaseSpec::Exp3 { .. } | BaseSpec::Hedge { .. }),
                "needs meta bold with an exp3 or hedge base",
            ),
            BoundKind::BoldIid => {
                BoundKind::Bold.check_applicable(config)?;
                need(
                    config.delay.is_action_independent(),
                    "needs an action-independent delay model",
                )
            }
            BoundKind::Qpmd => need(
                learner.meta == MetaKind::Qpmd
                    && stochastic
                    && !matches!(learner.base, BaseSpec::Hedge { .. }),
                "needs meta qpmd in a bernoulli environment",
            ),
            BoundKind::DelayedUcb1 => need(
                learner.meta == MetaKind::None && learner.base == BaseSpec::Ucb1 && stochastic,
                "needs meta none with base ucb1 in a bernoulli environment",
            ),
            BoundKind::DelayedKlUcb => need(
                learner.meta == MetaKind::None
                    && matches!(learner.base, BaseSpec::KlUcb { .. })
                    && stochastic,
                "needs meta none with base kl-ucb in a bernoulli environment",
            ),
        }
    }

    /// Evaluates the bound at step `t` given `E[G*_t]` and `E[G*_{i,t}]`.
    pub fn evaluate(
        self,
        config: &ExperimentConfig,
        t: f64,
        g_star: f64,
        arm_g_star: &[f64],
    ) -> Result<f64> {
        let k = config.environment.num_actions();
        let mean_delay = || {
            config.delay.mean().ok_or_else(|| {
                Error::InvalidParameter("delay model has no single mean".into())
            })
        };
        let means = || {
            config
                .environment
                .means()
                .ok_or_else(|| Error::InvalidParameter("bound needs arm means".into()))
        };
        let f_base = |m: f64| match config.learner.base {
            BaseSpec::Hedge { .. } => hedge_base_bound(m, k),
            _ => exp3_base_bound(m, k),
        };
        match self {
            BoundKind::Outstanding => Ok(outstanding_bound(t, mean_delay()?)),
            BoundKind::Bold => bold_regret_bound(f_base, g_star, t),
            BoundKind::BoldIid => Ok(bold_iid_regret_bound(f_base, t, mean_delay()?)),
            BoundKind::Qpmd => {
                let means = means()?;
                let gaps = action_gaps(means);
                check_lengths(gaps.len(), arm_g_star.len(), "per-arm peak outstanding")?;
                let base = match config.learner.base {
                    BaseSpec::Ucb1 => ucb1_base_bound(t, &gaps),
                    BaseSpec::KlUcb { .. } => klucb_base_bound(t, means, &config.klucb_constants),
                    _ => exp3_base_bound(t, k),
                };
                let penalty: f64 = gaps.iter().zip(arm_g_star).map(|(g, s)| g * s).sum();
                Ok(base + penalty)
            }
            BoundKind::DelayedUcb1 => ucb1_regret_bound(t, &action_gaps(means()?), arm_g_star),
            BoundKind::DelayedKlUcb => klucb_regret_bound(
                t,
                means()?,
                config.klucb_constants.epsilon,
                arm_g_star,
                &config.klucb_constants,
            ),
        }
    }

    /// Evaluates the bound at every step, with `g_star[t-1]` and
    /// `arm_g_star[t-1]` the expected peaks up to `t`.
    pub fn curve(
        self,
        config: &ExperimentConfig,
        g_star: &[f64],
        arm_g_star: &[Vec<f64>],
    ) -> Result<BoundCurve> {
        let values = (1..=g_star.len())
            .map(|t| self.evaluate(config, t as f64, g_star[t - 1], &arm_g_star[t - 1]))
            .collect::<Result<Vec<_>>>()?;
        let mut parameters = vec![("horizon".to_string(), g_star.len() as f64)];
        if let Some(mean) = config.delay.mean() {
            parameters.push(("mean_delay".to_string(), mean));
        }
        Ok(BoundCurve {
            label: self.name().to_string(),
            values,
            parameters,
        })
    }
}
