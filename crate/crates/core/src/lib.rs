//! Multi-objective Bayesian optimization over constrained amino-acid
//! sequence spaces.
//!
//! Independent Tanimoto-kernel Gaussian processes model each objective, a
//! genetic algorithm maximizes the acquisition function directly in
//! sequence space, and the same variation operators drive the GA-sum and
//! NSGA-II baselines.

pub mod acquisition;
pub mod benchmark;
pub mod config;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod evolve;
pub mod oracle;
pub mod pareto;
pub mod report;
pub mod runlog;
pub mod seqspace;
pub mod surrogate;

pub use error::{Error, Result};
