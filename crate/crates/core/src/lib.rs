//! Evaluation of index-based allocation policies from randomized trials.
//!
//! A policy scores agents with an index and treats the lowest-scoring
//! `ceil(alpha n)` of them. Given a two-arm trial in which only the policy
//! arm follows the policy, this crate estimates the average effect per
//! treatment with the base, subgroup, threshold, hybrid, reshuffle and
//! regression estimators, attaches asymptotic confidence intervals and
//! p-values, and runs the Monte Carlo experiments that check them.

pub mod cli;
pub mod core_types;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod inference;
pub mod policies;
pub mod simulators;

pub use core_types::*;
pub use error::{Error, Result};
