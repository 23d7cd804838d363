//! State-independent temporal action priors for exploration in off-policy RL.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod diffmath;
pub mod error;
pub mod flowprior;
pub mod harness;
pub mod mazeworld;
pub mod metrics;
pub mod netlib;
pub mod rng;

pub use error::{Error, Result};
