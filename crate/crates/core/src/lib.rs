//! Regularized approximate value iteration with optimistic bonuses (RAVI-UCB)
//! for infinite-horizon discounted MDPs, with tabular and linear-mixture
//! estimator backends, diagnostic checks and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod instances;
pub mod linmix;
pub mod mdp;
pub mod planner;
pub mod tabular;
pub mod validation;

pub use error::{Error, Result};
pub use harness::{Backend, ExperimentConfig, Problem};
pub use linmix::{LinearMixtureEstimator, LinearMixtureMdp};
pub use mdp::{ActionValueFunction, OccupancyMeasure, Policy, StateActionTable, TabularMdp, ValueFunction};
pub use planner::{run_ravi_ucb, PlannerConfig, RunLog};
pub use tabular::TabularEstimator;
pub use validation::CheckReport;
