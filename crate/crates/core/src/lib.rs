//! Capsule-endoscopy frame classification pipeline: class-balancing
//! augmentation, a convolutional autoencoder for latent features, a dense
//! classifier and a four-model classical ensemble over those latents, a
//! residual classifier with spatial and channel attention, and a
//! soft-voting fusion of the three, plus the evaluation metrics.

pub mod autoencoder;
pub mod cbam;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dnn;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod synxrf;
pub mod tensor;
pub mod vote;

pub use error::{Error, Result};
