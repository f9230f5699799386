//! Simulation lab for online learning with delayed feedback.
//!
//! The [`protocol`] module drives episodes; [`meta`] turns any non-delayed
//! [`base`] learner into a delayed one; [`delayed_ucb`] holds the white-box
//! index policies; [`labkit`] runs and checks experiments.

pub mod base;
pub mod config;
pub mod delayed_ucb;
pub mod environments;
pub mod error;
pub mod labkit;
pub mod meta;
pub mod protocol;
pub mod streams;

pub use base::{BaseLearner, BaseSpec};
pub use config::{ConfigError, ExperimentConfig, MetaKind};
pub use environments::{DelayModel, Environment, FeedbackKind};
pub use error::{Error, Result};
pub use protocol::{Episode, FeedbackBatch, Learner, Payload, RunTrace};
pub use streams::Streams;
