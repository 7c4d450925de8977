//! Allocation-only core of a two-stage facial sketch synthesis pipeline.
//!
//! Everything in this crate is pure computation over in-memory buffers: a
//! small double-precision autodiff engine, the stage-1 component GANs and the
//! stage-2 coarse-to-fine refiner, the loss suite, face-region geometry,
//! SSIM, attribute-sliced aggregation and the training step itself. File
//! formats, image codecs and the command line live in the `facesketch` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attributes;
pub mod autograd;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod regions;
pub mod ssim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
