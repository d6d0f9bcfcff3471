//! Artery/vein segmentation for retinal fundus images.
//!
//! The crate is a self-contained miniature deep-learning stack: a dense
//! tensor type with reverse-mode automatic differentiation ([`tensor`]),
//! the layer primitives the network needs ([`ops`]), the network itself —
//! a Unet backbone with Inception-style encoder blocks and a cascade of
//! dilated convolutions at the bottleneck ([`model`]) — plus data loading,
//! label encoding and augmentation ([`data`]) and the training loop,
//! metrics and checkpointing ([`train`]).
//!
//! Everything runs on the CPU with explicit, fixed reduction orders, so
//! forward and backward passes are bit-reproducible for a given seed.

pub mod check;
pub mod data;
pub mod error;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub(crate) mod util;

pub use error::{AvError, Result};
pub use tensor::{Element, GradTape, Tensor};
