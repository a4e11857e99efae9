//! A small CPU deep-learning engine built around one model: a U-shaped
//! encoder-decoder whose blocks combine grouped convolutions with a residual
//! path gated by channel and spatial attention, for binary segmentation.
//!
//! The crate carries its own NCHW tensor type and tape-based reverse-mode
//! autodiff ([`autodiff`]), layer kernels ([`nn`]), the network and its
//! parameter/FLOP accounting ([`model`]), losses and metrics, the LAMB
//! optimizer, and the patch/TTA data pipeline ([`data`]).
//!
//! Kernels are data-parallel over rayon when the default `parallel` feature
//! is enabled and fall back to plain loops otherwise; both paths reduce in
//! the same order and give identical results.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use params::{Param, ParamKind};
pub use tensor::{Element, Shape, Tensor};
