//! Federated-learning workbench: sensing features, preprocessing, synthetic cohorts,
//! a small NN engine, federation runtime, models and evaluation.

pub mod codec;
pub mod cohort;
pub mod config;
pub mod error;
pub mod fed;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod sensing;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
