//! Ordinal policies for reinforcement learning over ordered discrete actions.
//!
//! The crate is organized bottom-up:
//!
//! - [`dist`]: action distributions (ordinal cumulative-logit, softmax, diagonal Gaussian).
//! - [`approx`]: score functions (linear and two-hidden-layer MLP) with hand-written
//!   vector-Jacobian and Jacobian-vector products over a flat parameter vector.
//! - [`policy`]: parametric policies pairing a score function with a distribution head.
//! - [`env`]: the simulated tint-control task, a continuous target-tracking task and a
//!   per-dimension action discretizer.
//! - [`algo`]: REINFORCE, natural policy gradient, TRPO and PPO.
//! - [`exp`]: seeded experiment orchestration, learning curves and comparisons.
//! - [`cli`]: the `ordpol` command-line front end.

pub mod algo;
pub mod approx;
pub mod cli;
pub mod dist;
pub mod env;
mod error;
pub mod exp;
pub mod linalg;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
