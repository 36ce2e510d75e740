//! Influence functions for small denoising diffusion models.
//!
//! The crate trains tiny ε-prediction networks on toy data, builds
//! Kronecker-factored curvature approximations of diffusion GGN matrices, and
//! scores training examples by their influence on measurements of generated
//! samples. Retraining benchmarks (LDS, remove-top) check the predictions.

pub mod artifact;
pub mod cli;
pub mod curvature;
pub mod data;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod influence;
pub mod nn;
pub mod par;
pub mod rng;

pub use error::{Error, Result};

/// Lower-case hex encoding.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
