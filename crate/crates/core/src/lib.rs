//! Learnable, per-class data augmentation for multichannel 1D signals.
//!
//! The crate bundles a small reverse-mode differentiation tape, six
//! differentiable signal transformations, a K-stage stochastic augmentation
//! policy, implicit-differentiation hypergradients for learning that policy
//! jointly with a 1D CNN classifier, fixed baseline augmenters, and a
//! synthetic ECG-like benchmark.

pub mod augops;
pub mod baselines;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod gradcheck;
pub mod hypergrad;
pub mod model;
pub mod optim;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
