//! Permutation-invariant set learning built on dual-MLP dot-product aggregation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which every tolerance in the test-suite assumes.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod decomp;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod textfmt;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use rng::RngState;
pub use scalar::Scalar;

/// Double-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor.
pub type TensorF32 = tensor::Tensor<f32>;
/// Double-precision tape.
pub type Tape = autodiff::Tape<f64>;
