//! Black-box reductions that turn any non-delayed base learner into a
//! delayed-feedback learner.
//!
//! [`Bold`] keeps a pool of base instances and always predicts with a free
//! one, so each instance lives in a world without delays. [`Qpmd`] keeps a
//! single base instance and replays arrived feedback to it from per-action
//! FIFO buffers.

use std::collections::{HashMap, VecDeque};

use crate::base::BaseLearner;
use crate::error::{Error, Result};
use crate::protocol::{FeedbackBatch, Learner, LearnerSummary, Payload, StepDiagnostics};
use crate::streams::Stream;

pub type BaseFactory = Box<dyn FnMut() -> Box<dyn BaseLearner> + Send>;

/// Pool of base instances; an instance is busy while its last prediction's
/// feedback is still in flight.
pub struct Bold {
    num_actions: usize,
    factory: BaseFactory,
    instances: Vec<Box<dyn BaseLearner>>,
    busy: Vec<bool>,
    /// origin step -> instance that predicted it
    assignment: HashMap<usize, usize>,
    last_instance: Option<usize>,
}

impl Bold {
    pub fn new(num_actions: usize, factory: BaseFactory) -> Self {
        Bold {
            num_actions,
            factory,
            instances: Vec::new(),
            busy: Vec::new(),
            assignment: HashMap::new(),
            last_instance: None,
        }
    }

    pub fn pool_size(&self) -> usize {
        self.instances.len()
    }

    pub fn busy_count(&self) -> usize {
        self.busy.iter().filter(|&&b| b).count()
    }

    /// Picks the lowest free instance (creating one if all are busy) and
    /// returns `(instance, action)`.
    pub fn predict_with_instance(&mut self, t: usize, rng: &mut Stream) -> (usize, usize) {
        let id = match self.busy.iter().position(|&b| !b) {
            Some(id) => id,
            None => {
                self.instances.push((self.factory)());
                self.busy.push(false);
                self.instances.len() - 1
            }
        };
        let action = self.instances[id].predict(rng);
        self.busy[id] = true;
        self.assignment.insert(t, id);
        self.last_instance = Some(id);
        (id, action)
    }
}

impl Learner for Bold {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn select(&mut self, t: usize, rng: &mut Stream) -> Result<usize> {
        Ok(self.predict_with_instance(t, rng).1)
    }

    fn absorb(&mut self, batch: &FeedbackBatch, actions: &[usize]) -> Result<()> {
        for event in &batch.events {
            let id = self.assignment.remove(&event.origin_step).ok_or_else(|| {
                Error::ProtocolViolation(format!(
                    "feedback for step {} has no assigned instance",
                    event.origin_step
                ))
            })?;
            self.instances[id].update(actions[event.origin_step - 1], &event.payload)?;
            self.busy[id] = false;
        }
        Ok(())
    }

    fn diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics {
            instance: self.last_instance,
            pool_size: Some(self.instances.len()),
            ..StepDiagnostics::default()
        }
    }

    fn summary(&self) -> LearnerSummary {
        LearnerSummary {
            pool_size: Some(self.instances.len()),
            ..LearnerSummary::default()
        }
    }
}

/// Single base learner fed from per-action FIFO buffers.
pub struct Qpmd {
    base: Box<dyn BaseLearner>,
    queues: Vec<VecDeque<Payload>>,
    intent: Option<usize>,
    base_queries: usize,
    base_counts: Vec<usize>,
    enqueued: usize,
    dequeued: usize,
}

impl Qpmd {
    pub fn new(base: Box<dyn BaseLearner>) -> Self {
        let k = base.num_actions();
        Qpmd {
            base,
            queues: vec![VecDeque::new(); k],
            intent: None,
            base_queries: 0,
            base_counts: vec![0; k],
            enqueued: 0,
            dequeued: 0,
        }
    }

    fn query_base(&mut self, rng: &mut Stream) -> usize {
        let intent = self.base.predict(rng);
        self.base_queries += 1;
        self.base_counts[intent] += 1;
        self.intent = Some(intent);
        intent
    }

    /// Drains the buffer of the base's current intent until it is empty and
    /// returns the intent as the real action.
    pub fn predict(&mut self, rng: &mut Stream) -> Result<usize> {
        let mut intent = match self.intent {
            Some(i) => i,
            None => self.query_base(rng),
        };
        while let Some(payload) = self.queues[intent].pop_front() {
            self.dequeued += 1;
            self.base.update(intent, &payload)?;
            intent = self.query_base(rng);
        }
        Ok(intent)
    }

    /// Number of predictions requested from the base so far (`n'`).
    pub fn base_queries(&self) -> usize {
        self.base_queries
    }

    /// `T'_i(n')`: how often the base predicted each action.
    pub fn base_action_counts(&self) -> &[usize] {
        &self.base_counts
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    pub fn enqueued(&self) -> usize {
        self.enqueued
    }

    pub fn dequeued(&self) -> usize {
        self.dequeued
    }
}

impl Learner for Qpmd {
    fn num_actions(&self) -> usize {
        self.queues.len()
    }

    fn select(&mut self, _t: usize, rng: &mut Stream) -> Result<usize> {
        self.predict(rng)
    }

    fn absorb(&mut self, batch: &FeedbackBatch, actions: &[usize]) -> Result<()> {
        for event in &batch.events {
            let action = *actions.get(event.origin_step - 1).ok_or_else(|| {
                Error::ProtocolViolation(format!(
                    "feedback for unplayed step {}",
                    event.origin_step
                ))
            })?;
            self.queues[action].push_back(event.payload.clone());
            self.enqueued += 1;
        }
        Ok(())
    }

    fn diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics {
            queued: Some(self.enqueued - self.dequeued),
            base_queries: Some(self.base_queries),
            ..StepDiagnostics::default()
        }
    }

    fn summary(&self) -> LearnerSummary {
        LearnerSummary {
            base_queries: Some(self.base_queries),
            base_action_counts: Some(self.base_counts.clone()),
            ..LearnerSummary::default()
        }
    }
}
