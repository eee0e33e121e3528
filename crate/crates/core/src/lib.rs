//! Interpolated learning for shortcut mitigation.
//!
//! The crate bundles a small reverse-mode autodiff engine, a bag-of-embeddings
//! text classifier built on it, synthetic datasets with planted shortcuts and
//! ground-truth groups, auxiliary-model minority inference, the InterpoLL
//! training loop with its ERM/mixup/LISA comparisons, online-code MDL probing,
//! and a config-driven experiment harness.

pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod grouping;
pub mod harness;
pub mod model;
pub mod probing;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
