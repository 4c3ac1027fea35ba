//! Exact and simulation-based lambda-policy iteration for finite discounted
//! Markov decision problems.
//!
//! The crate is organized bottom-up:
//!
//! * [`mdp`] and [`exact`]: the model, Bellman operators, and exact solvers
//!   (value iteration, policy iteration, optimistic and lambda-PI).
//! * [`projection`]: feature bases, weighted projections, and the exact
//!   projected equation `C r = d` used as an oracle for every estimator.
//! * [`sampling`]: seeded long-trajectory and geometric (restart) sampling
//!   with the empirical estimators built on it.
//! * [`evaluators`]: LSTD, LSPE, lambda-PI(0), lambda-PI(1) and
//!   exploration-enhanced LSTD policy evaluation.
//! * [`driver`]: the approximate PI loop and the LSPI preset.

// `!(x <= tol)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod evaluators;
pub mod exact;
pub mod linalg;
pub mod mdp;
pub mod problems;
pub mod projection;
pub mod rng;
pub mod sampling;

pub use driver::{approximate_pi, greedy_policy_from_weights, lspi_preset, PiOptions, PiRecord, PiTrace};
pub use error::{Error, Result};
pub use evaluators::{EvaluationResult, EvaluatorConfig, EvaluatorKind};
pub use exact::{
    apply_t, apply_t_mu, apply_t_mu_lambda, exact_lambda_pi, exact_policy_iteration, optimistic_pi, policy_cost,
    stationary_distribution, value_iteration,
};
pub use mdp::{CostVector, Mdp, Policy, PolicyMatrices, WeightVector};
pub use problems::{generate_problem, ProblemKind};
pub use projection::{FeatureBasis, ProjectedEqCoefficients, StateDistribution};
pub use rng::RngStream;
pub use sampling::{SimEstimates, TrajectoryBatch};
