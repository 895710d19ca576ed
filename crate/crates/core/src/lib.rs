//! Gradient-based saliency maps and the audits that test whether they can be
//! trusted: localization utility, sensitivity to cascading weight
//! randomization, repeatability, and reproducibility.

pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod saliency;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
