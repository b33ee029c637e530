//! Hierarchical Bayesian auto-encoders for unsupervised factor disentanglement.
//!
//! The crate is organised bottom-up:
//!
//! - [`dist`]: closed-form densities and divergences for the latent priors,
//!   with Monte-Carlo and quadrature oracles.
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! - [`model`]: encoder/decoder networks, priors, the density-ratio
//!   discriminator and the training objectives.
//! - [`data`]: ground-truth factor datasets and factor-conditioned samplers.
//! - [`metrics`]: vote-based and regression-based disentanglement scores.
//! - [`harness`]: configuration, training loop, checkpoints, traversals and
//!   relevance reports.

pub mod autodiff;
pub mod data;
pub mod dist;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod special;

pub use error::{Error, Result};
