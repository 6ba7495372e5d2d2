//! Feature-augmentation adversarial attacks on small face-embedding
//! networks, with a black-box transfer evaluation harness.
//!
//! The crate provides:
//! - a dense f64 tensor core ([`tensor`]),
//! - layer-sequential embedding networks with injection hooks ([`nn`]),
//! - a deterministic synthetic-identity dataset ([`synth`]),
//! - embedding training, adversarial training, and FAR-based threshold
//!   calibration ([`trainer`]),
//! - the iterative sign-gradient attack engine with momentum, input
//!   diversity, feature dropout, and feature-augmentation wrappers
//!   ([`attacks`]),
//! - transfer-matrix evaluation, ablation sweeps, and reporting
//!   ([`harness`]).
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod attacks;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
