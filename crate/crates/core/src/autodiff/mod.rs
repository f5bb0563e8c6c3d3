//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records one forward pass. Parameters live outside the tape in a
//! [`ParamSet`] and are bound as leaves per pass; after [`Tape::backward`] the
//! gradients are read back through the [`Bound`] handles and fed to
//! [`AdamState::step`].

mod adam;
pub mod conv;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::ConvGeom;
pub use params::{Bound, ParamId, ParamSet, TensorEntry};
pub use tape::{ChannelStats, NormMode, Tape, Var, BN_EPS, PROB_FLOOR};
pub use tensor::Tensor;

