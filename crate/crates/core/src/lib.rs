//! Compositional conservatism with anchor-seeking for offline reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks, Adam, Gaussian heads, finite-difference checks.
//! - [`env`]: the point-mass environment, behavior policies, offline datasets and score scale.
//! - [`dynamics`]: forward Gaussian ensemble and deterministic reverse model.
//! - [`anchor`]: reverse rollouts, the anchor-seeking policy, decomposition and heuristic anchors.
//! - [`bilinear`]: bilinear-transduction heads and the out-of-combination probe.
//! - [`algo`]: behavior cloning and conservative SAC over plain or bilinear heads.
//! - [`harness`]: configuration, seeding, the staged pipeline and the ablation driver.

pub mod algo;
pub mod anchor;
pub mod binio;
pub mod bilinear;
pub mod error;
pub mod harness;
pub mod dynamics;
pub mod env;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};
