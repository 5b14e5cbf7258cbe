//! Heavy-ball momentum advantage actor-critic (HB-A2C) on finite MDPs.
//!
//! The crate is split along the lines of the algorithm and its analysis:
//!
//! - [`mdp`]: finite MDPs, feature embeddings, the softmax-linear policy and
//!   contiguous T-step frame sampling.
//! - [`algo`]: the actor-critic recursion itself (semi-gradient, momentum
//!   buffer, projected critic step, T-step advantage policy gradient).
//! - [`oracle`]: exact quantities for a finite instance (stationary
//!   distribution, values, optimal critic, exact policy gradient, constants).
//! - [`theory`]: executable checks of the bounds the analysis relies on, plus
//!   estimators for constants that only have existence results.
//! - [`experiment`]: seeded multi-run driver, rate fits and momentum sweeps.
//!
//! Everything is deterministic given a seed; see [`rng`] for the stream
//! layout.

// NaN must fail validation, so `!(x <= bound)` is used on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
