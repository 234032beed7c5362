//! Sensitivity-constrained Fourier neural operators.
//!
//! The crate generates differential-equation training data together with
//! exact parameter Jacobians, trains Fourier neural operator surrogates
//! with optional sensitivity and equation-residual losses, and inverts
//! trained surrogates for physical parameters.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod inversion;
pub mod metrics;
pub mod operator;
pub mod solvers;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
