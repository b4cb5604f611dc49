//! Core numerics for fine-grained vehicle recognition with residual networks.
//!
//! Everything here is allocation-only and works without `std`: a dense tensor
//! with a reverse-mode gradient tape, the layer vocabulary of a pre-activation
//! ResNet, spatially-weighted pooling, the binned encoding used by the
//! localisation network, a synthetic glyph dataset, and the training and
//! evaluation loops that tie them together. File formats, timing and the
//! command-line front end live in the `fgv` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod binning;
pub mod checkpoint;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
mod scalar;
pub mod swp;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod views;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tensor::{Fill, Tensor};
