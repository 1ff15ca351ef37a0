//! Offline goal-conditioned RL: point environments, dataset tooling,
//! hindsight relabeling, a small dense-network stack, weighted supervised
//! policy learners with baselines, evaluation, and an exact tabular oracle
//! for the weighting theory.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tabular and tensor code indexes several parallel arrays per loop.
#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod bench;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod relabel;
pub mod rng;
pub mod theory;

pub use error::{Error, LoadError, Result};
