//! Checkpoint-based training data attribution.
//!
//! This crate holds the allocation-only core: dataset construction and
//! featurization, a small tanh-MLP / logistic classifier trained with AdamW,
//! TracIn influence scoring (gradient dot product and cosine variants),
//! ground-truth oracles (leave-one-out retraining and exact Hessian
//! influence for the convex mode) and the cross-group sharing analyses.
//!
//! Everything here is deterministic given its inputs and seed. File formats,
//! parallel execution and the command-line driver live in the `tracelens`
//! companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod influence;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod vecmath;

pub use error::{Error, Result};
