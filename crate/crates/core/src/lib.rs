//! Adversarially robust conditional GAN for single-lead ECG beat
//! classification, built on a small reverse-mode autodiff core.
//!
//! * [`autodiff`]: tensors, tape, 1-D layers, Adam.
//! * [`data`]: beat windowing, normalization, SMOTE, splits, noise, CSV.
//! * [`models`]: generator, three-headed discriminator and their blocks.
//! * [`objectives`]: the individual loss terms and their weighting.
//! * [`attacks`]: FGSM, BIM, PGD, CW-L∞, boundary and HopSkipJump attacks.
//! * [`train`]: training loops, cross-validation and evaluation metrics.

pub mod attacks;
pub mod autodiff;
pub mod data;
mod error;
pub mod models;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
