//! Few-step conditional motion generation with a denoising diffusion GAN.
//!
//! The crate trains a conditional generator/discriminator pair that models
//! the denoising distribution of a short diffusion chain, samples skeletal
//! motion in a handful of steps with classifier-free guidance, and ships the
//! metrics and analytic oracles used to check the result.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod motion;
pub mod networks;
pub mod sampler;
pub mod schedule;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
