//! Desk-scale laboratory for constrained average-reward Markov decision
//! processes: exact occupancy-measure programs, optimism and posterior
//! sampling learners, a primal-dual policy gradient, a finite-horizon
//! approximation learner for weakly communicating chains, benchmark
//! environments, and an experiment harness.

pub mod envs;
pub mod finite_horizon;
pub mod harness;
pub mod lp;
pub mod model;
pub mod model_based;
pub mod occupancy;
pub mod policy_gradient;
