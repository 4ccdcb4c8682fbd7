//! Spectrum-aware pre-training of 3D molecular representations.
//!
//! A 3D encoder is trained by coordinate denoising; a multi-spectrum
//! transformer ([`specformer`]) is trained by masked patch reconstruction;
//! an InfoNCE objective aligns the two embeddings. Everything runs on the
//! small `f64` reverse-mode engine in [`numerics`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::needless_range_loop)]

pub mod encoder3d;
pub mod error;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod spectra;
pub mod specformer;

pub use error::{Error, Result};
