//! A desk-scale laboratory for studying how the KL weight of a variational
//! autoencoder should evolve during training.
//!
//! The crate bundles everything needed to run the comparison end to end
//! without external ML frameworks:
//!
//! - [`tensor`], [`graph`], [`nn`], [`adam`]: a minimal double-precision
//!   reverse-mode autodiff core for small dense networks.
//! - [`vae`]: Gaussian encoder, reparameterized sampling, Bernoulli decoder,
//!   closed-form KL and the beta-weighted ELBO loss.
//! - [`vga`]: a variational genetic algorithm over the KL weight beta —
//!   SBX crossover, Cauchy mutation, fitness, probabilistic selection.
//! - [`schedulers`]: baseline beta schedules (constant, cost annealing,
//!   cyclical annealing, PID set-point control).
//! - [`trainer`]: the inner-outer joint training loop with checkpointed,
//!   side-effect-free candidate trials and CSV metric logging.
//! - [`sprites`]: a procedural binary sprites dataset (shape x scale x
//!   orientation x position) with a bit-packed cache format.
//! - [`plant`]: a closed-form synthetic stand-in for VAE training dynamics,
//!   used to exercise controllers without training a network.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod graph;
pub mod hash;
pub mod logging;
pub mod nn;
pub mod plant;
pub mod rng;
pub mod schedulers;
pub mod sprites;
pub mod tensor;
pub mod trainer;
pub mod traverse;
pub mod vae;
pub mod vga;

pub use error::{EvaeError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
