//! Experiment harness: regret, bound calculators, Monte Carlo and checks.

pub mod bounds;
pub mod montecarlo;
pub mod regret;
pub mod reorder;
pub mod validate;

pub use bounds::{BoundCurve, BoundKind, KlUcbConstants};
pub use montecarlo::{build_learner, monte_carlo, run_single, AggregateStats, RunOutput};
pub use regret::{pseudo_regret, realized_regret};
pub use reorder::{reorder_distribution_check, ReorderReport};
pub use validate::{validate, ValidationReport};
