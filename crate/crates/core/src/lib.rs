//! Dataset difficulty estimation with pointwise V-usable information (PVI),
//! PVI-similarity task grouping, and hard-parameter-sharing multi-task
//! training.
//!
//! The pipeline runs in stages:
//!
//! 1. [`pvi`]: fit a conditional and a null model per task and score every
//!    held-out instance.
//! 2. [`grouping`]: test whether tasks' PVI samples are distinguishable and
//!    pick groups of statistically similar tasks.
//! 3. [`model`]: train single-task baselines and one shared-encoder model per
//!    group.
//! 4. [`eval`]: compare the two with multi-seed confidence intervals.
//!
//! [`pipeline`] wires the stages together and [`cli`] exposes them.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod grouping;
pub mod model;
mod parallel;
pub mod pipeline;
pub mod pvi;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
