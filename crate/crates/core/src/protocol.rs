//! The delayed-feedback interaction loop.
//!
//! At each step `t` the learner picks an action, the environment answers,
//! a delay `tau_t` is drawn and the feedback is scheduled for the end of
//! step `t + tau_t`. All feedback scheduled for step `t` (including the
//! feedback of step `t` itself when `tau_t = 0`) is delivered as one batch,
//! sorted by origin step, at the end of step `t`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::base::BaseLearner;
use crate::environments::{DelayModel, Environment};
use crate::error::{Error, Result};
use crate::streams::{Stream, Streams};

/// Feedback content: the realized reward under bandit feedback, or the full
/// reward vector of the step under full information.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Payload {
    Reward(f64),
    Vector(Vec<f64>),
}

impl Payload {
    /// The scalar reward, if this is bandit feedback.
    pub fn reward(&self) -> Option<f64> {
        match self {
            Payload::Reward(r) => Some(*r),
            Payload::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackEvent {
    /// Step (1-based) whose decision produced this feedback.
    pub origin_step: usize,
    pub payload: Payload,
}

/// Everything delivered at the end of one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FeedbackBatch {
    pub arrival_step: usize,
    pub events: Vec<FeedbackEvent>,
}

impl FeedbackBatch {
    pub fn empty(arrival_step: usize) -> Self {
        FeedbackBatch {
            arrival_step,
            events: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-step learner state exposed for logging and invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepDiagnostics {
    /// Base instance that made this step's prediction (BOLD).
    pub instance: Option<usize>,
    /// Number of base instances created so far (BOLD).
    pub pool_size: Option<usize>,
    /// Total buffered feedback after the step (QPM-D).
    pub queued: Option<usize>,
    /// Number of times the inner base learner has been queried (QPM-D).
    pub base_queries: Option<usize>,
}

/// End-of-run learner statistics.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct LearnerSummary {
    pub base_queries: Option<usize>,
    /// Number of times the inner base learner predicted each action.
    pub base_action_counts: Option<Vec<usize>>,
    pub pool_size: Option<usize>,
}

/// A forecaster that lives in the delayed world.
///
/// The engine calls `select` exactly once per step and `absorb` exactly once
/// per step afterwards, with the (possibly empty) batch for that step.
pub trait Learner {
    fn num_actions(&self) -> usize;

    fn select(&mut self, t: usize, rng: &mut Stream) -> Result<usize>;

    /// `actions[s - 1]` is the action played at step `s`.
    fn absorb(&mut self, batch: &FeedbackBatch, actions: &[usize]) -> Result<()>;

    fn diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics::default()
    }

    fn summary(&self) -> LearnerSummary {
        LearnerSummary::default()
    }
}

impl<L: Learner + ?Sized> Learner for Box<L> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn select(&mut self, t: usize, rng: &mut Stream) -> Result<usize> {
        (**self).select(t, rng)
    }
    fn absorb(&mut self, batch: &FeedbackBatch, actions: &[usize]) -> Result<()> {
        (**self).absorb(batch, actions)
    }
    fn diagnostics(&self) -> StepDiagnostics {
        (**self).diagnostics()
    }
    fn summary(&self) -> LearnerSummary {
        (**self).summary()
    }
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub horizon: usize,
    pub num_actions: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub delays: Vec<u64>,
    pub batches: Vec<FeedbackBatch>,
    /// `outstanding[t - 1]` is `G_t`.
    pub outstanding: Vec<usize>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// `(origin_step, arrival_step)` of feedback scheduled after the horizon.
    pub undelivered: Vec<(usize, usize)>,
}

impl RunTrace {
    /// Running maximum of `G_t`: `G*_t = max_{s <= t} G_s`.
    pub fn max_outstanding_series(&self) -> Vec<usize> {
        self.outstanding
            .iter()
            .scan(0, |best, &g| {
                *best = (*best).max(g);
                Some(*best)
            })
            .collect()
    }

    pub fn max_outstanding(&self) -> usize {
        self.outstanding.iter().copied().max().unwrap_or(0)
    }

    /// `gaps[t - 1][i]` is `G_{i,t} = T_i(t-1) - S_i(t-1)`.
    pub fn per_action_gap_series(&self) -> Vec<Vec<usize>> {
        let mut in_flight = vec![0usize; self.num_actions];
        let mut series = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            series.push(in_flight.clone());
            in_flight[self.actions[t]] += 1;
            for event in &self.batches[t].events {
                in_flight[self.actions[event.origin_step - 1]] -= 1;
            }
        }
        series
    }

    /// `G*_{i,n} = max_t G_{i,t}` for each action.
    pub fn max_per_action_gap(&self) -> Vec<usize> {
        let mut best = vec![0; self.num_actions];
        for row in self.per_action_gap_series() {
            for (b, g) in best.iter_mut().zip(row) {
                *b = (*b).max(g);
            }
        }
        best
    }

    /// `T_i(n)` for every action.
    pub fn play_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_actions];
        for &a in &self.actions {
            counts[a] += 1;
        }
        counts
    }

    /// Writes the trace as CSV. Reals carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, with_diagnostics: bool) -> Result<()> {
        let mut header = String::from("t,action,reward,delay,g_t,arrivals");
        if with_diagnostics {
            header.push_str(",instance,pool_size,queued");
        }
        writeln!(out, "{header}")?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for t in 0..self.horizon {
            let arrivals = self.batches[t]
                .events
                .iter()
                .map(|e| e.origin_step.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let mut line = String::new();
            write!(
                line,
                "{},{},{},{},{},{}",
                t + 1,
                self.actions[t],
                format_real(self.rewards[t]),
                self.delays[t],
                self.outstanding[t],
                arrivals
            )
            .expect("writing to a String");
            if with_diagnostics {
                let d = &self.diagnostics[t];
                write!(
                    line,
                    ",{},{},{}",
                    opt(d.instance),
                    opt(d.pool_size),
                    opt(d.queued)
                )
                .expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Formats a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Test hooks that deliberately break the protocol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultInjection {
    /// Withhold this origin's feedback from the learner while still recording
    /// it as delivered in the trace.
    pub drop_feedback_origin: Option<usize>,
}

/// Step-wise driver for one episode.
pub struct Episode<'a, E: ?Sized, L: ?Sized> {
    env: &'a mut E,
    learner: &'a mut L,
    delays: &'a DelayModel,
    streams: Streams,
    faults: FaultInjection,
    t: usize,
    pending: BTreeMap<usize, Vec<FeedbackEvent>>,
    pending_count: usize,
    trace: RunTrace,
}

impl<'a, E, L> Episode<'a, E, L>
where
    E: Environment + ?Sized,
    L: Learner + ?Sized,
{
    pub fn new(
        env: &'a mut E,
        learner: &'a mut L,
        delays: &'a DelayModel,
        streams: Streams,
    ) -> Result<Self> {
        let num_actions = env.num_actions();
        if learner.num_actions() != num_actions {
            return Err(Error::LengthMismatch {
                what: "learner action count",
                got: learner.num_actions(),
                expected: num_actions,
            });
        }
        delays.validate(num_actions)?;
        Ok(Episode {
            env,
            learner,
            delays,
            streams,
            faults: FaultInjection::default(),
            t: 0,
            pending: BTreeMap::new(),
            pending_count: 0,
            trace: RunTrace {
                horizon: 0,
                num_actions,
                actions: Vec::new(),
                rewards: Vec::new(),
                delays: Vec::new(),
                batches: Vec::new(),
                outstanding: Vec::new(),
                diagnostics: Vec::new(),
                undelivered: Vec::new(),
            },
        })
    }

    pub fn with_faults(mut self, faults: FaultInjection) -> Self {
        self.faults = faults;
        self
    }

    /// Number of steps played so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn learner(&self) -> &L {
        self.learner
    }

    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let t = self.t;
        self.trace.outstanding.push(self.pending_count);

        let action = self.learner.select(t, &mut self.streams.learner)?;
        if action >= self.trace.num_actions {
            return Err(Error::ProtocolViolation(format!(
                "learner chose action {action} at step {t}, only {} exist",
                self.trace.num_actions
            )));
        }
        let outcome = self
            .env
            .respond(t, action, &mut self.streams.environment)?;
        if !(0.0..=1.0).contains(&outcome.reward) {
            return Err(Error::ProtocolViolation(format!(
                "reward {} at step {t} is outside [0, 1]",
                outcome.reward
            )));
        }
        let delay = self.delays.sample(t, action, &mut self.streams.delay);
        let arrival = t + delay as usize;
        self.pending.entry(arrival).or_default().push(FeedbackEvent {
            origin_step: t,
            payload: outcome.payload,
        });
        self.pending_count += 1;

        self.trace.actions.push(action);
        self.trace.rewards.push(outcome.reward);
        self.trace.delays.push(delay);

        let events = self.pending.remove(&t).unwrap_or_default();
        self.pending_count -= events.len();
        let batch = FeedbackBatch {
            arrival_step: t,
            events,
        };
        match self.faults.drop_feedback_origin {
            Some(dropped) if batch.events.iter().any(|e| e.origin_step == dropped) => {
                let mut tampered = batch.clone();
                tampered.events.retain(|e| e.origin_step != dropped);
                self.learner.absorb(&tampered, &self.trace.actions)?;
            }
            _ => self.learner.absorb(&batch, &self.trace.actions)?,
        }
        self.trace.batches.push(batch);
        self.trace.diagnostics.push(self.learner.diagnostics());
        Ok(())
    }

    /// Closes the episode, keeping the first `horizon` steps in the trace.
    pub fn into_trace(self, horizon: usize) -> RunTrace {
        let mut trace = self.trace;
        let horizon = horizon.min(trace.actions.len());
        trace.horizon = horizon;
        trace.actions.truncate(horizon);
        trace.rewards.truncate(horizon);
        trace.delays.truncate(horizon);
        trace.batches.truncate(horizon);
        trace.outstanding.truncate(horizon);
        trace.diagnostics.truncate(horizon);
        trace.undelivered = trace
            .delays
            .iter()
            .enumerate()
            .map(|(i, &d)| (i + 1, i + 1 + d as usize))
            .filter(|&(_, arrival)| arrival > horizon)
            .collect();
        trace
    }
}

/// Runs one full episode of `horizon` steps.
pub fn run_episode<E, L>(
    env: &mut E,
    learner: &mut L,
    delays: &DelayModel,
    horizon: usize,
    streams: Streams,
) -> Result<RunTrace>
where
    E: Environment + ?Sized,
    L: Learner + ?Sized,
{
    if horizon == 0 {
        return Err(Error::EmptyRun);
    }
    let mut episode = Episode::new(env, learner, delays, streams)?;
    for _ in 0..horizon {
        episode.step()?;
    }
    Ok(episode.into_trace(horizon))
}

/// `(action, reward)` sequence of a learner that sees every feedback immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct UndelayedRun {
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Reference driver without any delay machinery: predict, respond, update.
pub fn run_undelayed<E, B>(
    env: &mut E,
    base: &mut B,
    horizon: usize,
    mut streams: Streams,
) -> Result<UndelayedRun>
where
    E: Environment + ?Sized,
    B: BaseLearner + ?Sized,
{
    if horizon == 0 {
        return Err(Error::EmptyRun);
    }
    let mut run = UndelayedRun {
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    for t in 1..=horizon {
        let action = base.predict(&mut streams.learner);
        let outcome = env.respond(t, action, &mut streams.environment)?;
        base.update(action, &outcome.payload)?;
        run.actions.push(action);
        run.rewards.push(outcome.reward);
    }
    Ok(run)
}

/// `G_t = sum_{s=1}^{t-1} 1{s + tau_s >= t}`, evaluated straight from the definition.
///
/// `delays[s - 1]` is `tau_s`. Requires `t <= delays.len() + 1`.
pub fn outstanding_count(delays: &[u64], t: usize) -> usize {
    assert!(t <= delays.len() + 1, "step {t} beyond the delay sequence");
    (1..t)
        .filter(|&s| s as u64 + delays[s - 1] >= t as u64)
        .count()
}

/// `G*_n = max_{1 <= t <= n} G_t`.
pub fn max_outstanding(delays: &[u64], n: usize) -> usize {
    (1..=n)
        .map(|t| outstanding_count(delays, t))
        .max()
        .unwrap_or(0)
}

/// `G_{i,t} = T_i(t-1) - S_i(t-1)` recomputed from the trace.
pub fn per_action_gap(trace: &RunTrace, action: usize, t: usize) -> Result<usize> {
    crate::error::check_index("action", action, trace.num_actions)?;
    if t == 0 || t > trace.horizon {
        return Err(Error::OutOfRange {
            what: "step",
            index: t,
            len: trace.horizon,
        });
    }
    let plays = trace.actions[..t - 1]
        .iter()
        .filter(|&&a| a == action)
        .count();
    let seen = trace.batches[..t - 1]
        .iter()
        .flat_map(|b| &b.events)
        .filter(|e| trace.actions[e.origin_step - 1] == action)
        .count();
    Ok(plays - seen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::Ucb1;
    use crate::delayed_ucb::{DelayedUcb, IndexKind};
    use crate::environments::BernoulliBandit;

    fn origins(batch: &FeedbackBatch) -> Vec<usize> {
        batch.events.iter().map(|e| e.origin_step).collect()
    }

    fn ucb_run(means: Vec<f64>, delays: DelayModel, horizon: usize, seed: u64) -> RunTrace {
        let mut env = BernoulliBandit::new(means).unwrap();
        let mut learner = DelayedUcb::new(env.num_actions(), IndexKind::Ucb1);
        run_episode(
            &mut env,
            &mut learner,
            &delays,
            horizon,
            Streams::derive(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn outstanding_count_by_definition() {
        assert_eq!(outstanding_count(&[0, 0, 0], 3), 0);
        assert_eq!(outstanding_count(&[3, 1, 0], 1), 0);
        assert_eq!(outstanding_count(&[3, 1, 0], 3), 2);
        assert_eq!(outstanding_count(&[3, 1, 0], 4), 1);
        assert_eq!(max_outstanding(&[3, 1, 0], 4), 2);
        assert_eq!(max_outstanding(&[0; 10], 11), 0);
        assert_eq!(max_outstanding(&[4; 20], 20), 4);
    }

    #[test]
    fn zero_delay_delivers_every_event_immediately() {
        let trace = ucb_run(vec![0.4, 0.6], DelayModel::zero(), 30, 1);
        for (t, batch) in trace.batches.iter().enumerate() {
            assert_eq!(origins(batch), vec![t + 1]);
        }
        assert!(trace.outstanding.iter().all(|&g| g == 0));
        assert!(trace.undelivered.is_empty());
    }

    #[test]
    fn constant_delay_two_schedule() {
        let trace = ucb_run(vec![0.5], DelayModel::Constant { value: 2 }, 5, 1);
        assert!(trace.batches[0].is_empty());
        assert!(trace.batches[1].is_empty());
        assert_eq!(origins(&trace.batches[2]), vec![1]);
        assert_eq!(origins(&trace.batches[3]), vec![2]);
        assert_eq!(origins(&trace.batches[4]), vec![3]);
        assert_eq!(trace.undelivered, vec![(4, 6), (5, 7)]);
        assert_eq!(trace.outstanding, vec![0, 1, 2, 2, 2]);
    }

    #[test]
    fn constant_delay_peak_outstanding() {
        let trace = ucb_run(vec![0.5, 0.2], DelayModel::Constant { value: 7 }, 40, 2);
        assert_eq!(trace.max_outstanding(), 7);
    }

    #[test]
    fn single_arm_gap_with_delay_two() {
        let mut env = BernoulliBandit::new(vec![0.5]).unwrap();
        let mut learner = DelayedUcb::new(1, IndexKind::Ucb1);
        let trace = run_episode(
            &mut env,
            &mut learner,
            &DelayModel::Constant { value: 2 },
            3,
            Streams::derive(0, 0),
        )
        .unwrap();
        assert_eq!(per_action_gap(&trace, 0, 3).unwrap(), 2);
        assert_eq!(per_action_gap(&trace, 0, 1).unwrap(), 0);
        assert!(per_action_gap(&trace, 1, 1).is_err());
        assert!(per_action_gap(&trace, 0, 4).is_err());
    }

    #[test]
    fn per_action_gaps_partition_outstanding() {
        let trace = ucb_run(
            vec![0.3, 0.5, 0.55],
            DelayModel::Geometric { mean: 3.0 },
            200,
            3,
        );
        let series = trace.per_action_gap_series();
        for t in 1..=trace.horizon {
            let sum: usize = series[t - 1].iter().sum();
            assert_eq!(sum, trace.outstanding[t - 1]);
            for (a, &gap) in series[t - 1].iter().enumerate() {
                assert_eq!(gap, per_action_gap(&trace, a, t).unwrap());
            }
        }
    }

    #[test]
    fn empty_run_is_rejected() {
        let mut env = BernoulliBandit::new(vec![0.5]).unwrap();
        let mut learner = DelayedUcb::new(1, IndexKind::Ucb1);
        let err = run_episode(
            &mut env,
            &mut learner,
            &DelayModel::zero(),
            0,
            Streams::derive(0, 0),
        );
        assert_eq!(err, Err(Error::EmptyRun));
    }

    struct Rogue;

    impl Learner for Rogue {
        fn num_actions(&self) -> usize {
            2
        }
        fn select(&mut self, _t: usize, _rng: &mut Stream) -> Result<usize> {
            Ok(5)
        }
        fn absorb(&mut self, _batch: &FeedbackBatch, _actions: &[usize]) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn out_of_range_action_is_a_protocol_violation() {
        let mut env = BernoulliBandit::new(vec![0.5, 0.5]).unwrap();
        let err = run_episode(
            &mut env,
            &mut Rogue,
            &DelayModel::zero(),
            3,
            Streams::derive(0, 0),
        );
        assert!(matches!(err, Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn zero_delay_matches_the_undelayed_driver() {
        let mut env = BernoulliBandit::new(vec![0.4, 0.5, 0.45]).unwrap();
        let trace = ucb_run(vec![0.4, 0.5, 0.45], DelayModel::zero(), 300, 9);
        let mut base = Ucb1::new(3);
        let plain = run_undelayed(&mut env, &mut base, 300, Streams::derive(9, 0)).unwrap();
        assert_eq!(trace.actions, plain.actions);
        assert_eq!(trace.rewards, plain.rewards);
    }

    #[test]
    fn csv_layout() {
        let trace = ucb_run(vec![0.5, 0.5], DelayModel::Constant { value: 1 }, 3, 4);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "t,action,reward,delay,g_t,arrivals");
        assert!(lines[1].starts_with("1,0,"));
        assert!(lines[1].ends_with(",1,0,"));
        assert!(lines[2].ends_with(",1,1,1"));
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(1.0), "1.0000000000000000e0");
    }
}
