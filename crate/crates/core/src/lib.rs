//! Imbalanced mitosis-patch classification pipeline: class-conditional
//! latent-diffusion synthesis of minority patches, k-fold classifier
//! training under real-only and synthetically balanced regimes, and
//! prevalence-robust evaluation.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod generator;
pub mod imageio;
pub mod kv;
pub mod metrics;
pub mod nn;
pub mod orchestration;
pub mod seed;
pub mod toy;
pub mod transforms;

pub use error::{Error, Result};
