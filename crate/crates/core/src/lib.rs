//! Capsule autoencoder for 3D human pose estimation from depth images.
//!
//! The crate is `no_std` + `alloc`. The `std` feature (on by default) turns on
//! runtime SIMD detection in the matrix kernels and nothing else; all IO lives
//! in the companion `deca` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod capsules;
pub mod decoders;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Seeded random source used everywhere randomness is consumed.
pub type SeededRng = rand_chacha::ChaCha8Rng;
