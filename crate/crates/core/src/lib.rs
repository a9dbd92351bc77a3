//! Falsification of observational causal studies against randomized trial
//! data through kernel tests of conditional moment restrictions on CATE
//! signal differences.
//!
//! The pipeline runs: [`data`] → [`nuisance`] (cross-fitted [`learners`]) →
//! [`signals`] → [`kernels`] → [`mmr`]. [`baselines`] holds the ATE/GATE
//! Z-tests and closed-form power calculators, [`simgen`] the semi-synthetic
//! benchmark generators, and [`harness`] the experiment runner.

pub mod data;
pub mod error;
pub mod normal;
pub mod rng;

pub use error::{Error, Result};
pub mod learners;
pub mod nuisance;
pub mod signals;
pub mod kernels;
pub mod mmr;
pub mod baselines;
pub mod simgen;
pub mod harness;
