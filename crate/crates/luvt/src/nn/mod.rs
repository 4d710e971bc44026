//! Minimal tensor / reverse-mode gradient / optimizer substrate shared by
//! the diffusion denoiser and the VAE baseline.
//!
//! Everything is generic over [`Scalar`] so production code runs in `f32`
//! while gradient checks run in `f64` against central finite differences.

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use optim::{AdamW, OptimizerState};
pub use params::ParamSet;
pub use tape::{Tape, VarId};
pub use tensor::{Scalar, Shape, Tensor};
pub use unet::{DenoiserParams, UNetConfig};
