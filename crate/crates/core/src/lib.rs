//! Positive-unlabeled learning with an observer-augmented GAN.
//!
//! The crate bundles everything a desk-scale PU experiment needs:
//!
//! - [`nn`]: a small reverse-mode autodiff engine with dense layers,
//!   spectral normalization, batch normalization, dropout and Adam;
//! - [`data`]: synthetic and IDX datasets and the SCAR positive/unlabeled split;
//! - [`gan`]: the three-network trainer (generator, discriminator, observer);
//! - [`baselines`]: two-stage D-GAN, the naive unlabeled-as-negative
//!   classifier and a fully supervised reference;
//! - [`metrics`]: accuracy, Fréchet distance and last-N summaries.

pub mod baselines;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
