//! Core of a dual color space dehazing network.
//!
//! Everything here builds without `std` (with `alloc`): tensors and their
//! differentiable operations, the model, losses, metrics, haze synthesis and
//! the training loop. File formats and the command line live in the `sgdn`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod backbone;
pub mod bridge;
pub mod checkpoint;
pub mod colorspace;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod real;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Result, SgdnError};
pub use real::Real;
pub use tensor::Tensor;
