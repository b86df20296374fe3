//! Bidirectional pruning–regrowth for small neural networks.
//!
//! Train a dense model, prune it to extreme unstructured sparsity, then
//! revive selected connections while fine-tuning, recording accuracy
//! against sparsity at every step.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod sparsity;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
