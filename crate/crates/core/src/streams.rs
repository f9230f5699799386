//! Seeded random substreams.
//!
//! Every episode draws from three independent generators (environment
//! outcomes, delays, learner randomization). Each one is seeded from a
//! SHA-256 digest of the master seed, a component label and the run index,
//! so swapping the learner never perturbs the delay sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator type used by every component of the simulator.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Environment,
    Delay,
    Learner,
}

impl Component {
    fn label(self) -> &'static [u8] {
        match self {
            Component::Environment => b"environment",
            Component::Delay => b"delay",
            Component::Learner => b"learner",
        }
    }
}

pub fn derive_stream(master_seed: u64, component: Component, run_index: u64) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(component.label());
    hasher.update(run_index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    Stream::from_seed(seed)
}

/// The three substreams of one episode.
#[derive(Debug, Clone)]
pub struct Streams {
    pub environment: Stream,
    pub delay: Stream,
    pub learner: Stream,
}

impl Streams {
    pub fn derive(master_seed: u64, run_index: u64) -> Self {
        Streams {
            environment: derive_stream(master_seed, Component::Environment, run_index),
            delay: derive_stream(master_seed, Component::Delay, run_index),
            learner: derive_stream(master_seed, Component::Learner, run_index),
        }
    }
}
