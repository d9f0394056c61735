//! Recombination and recalibration (RR) blocks for fully convolutional
//! segmentation networks, built on a small reverse-mode autodiff tape.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is off.
//! Everything here is pure computation: file formats, configuration files
//! and the command line live in the `segse-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod params;
pub mod phantom;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Whether a forward pass updates statistics and samples dropout masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
