//! Unsupervised defect detection and localization for ultrasonic
//! wave-propagation image sequences.
//!
//! The pipeline: simulate LUVT-like wavefield videos ([`wavesim`]), train a
//! diffusion model or VAE on defect-free sequences only ([`diffusion`],
//! [`vae`] on the [`nn`] substrate), reconstruct test sequences, localize
//! defects from reconstruction-error maps ([`localize`]), and score the
//! result ([`metrics`]). The [`harness`] module wires it all into the CLI.

pub mod diffusion;
pub mod error;
pub mod harness;
pub mod localize;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod vae;
pub mod wavesim;

pub use error::{Error, Result};
