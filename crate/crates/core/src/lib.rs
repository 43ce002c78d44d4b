//! Context-aware multimodal fusion for hateful-meme classification.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std`; file formats, image decoding and the command line
//! live in the `fusionet` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use fusion::FusionKind;
pub use model::{Dims, Model, ModelConfig};
pub use tensor::{Scalar, Tensor};
