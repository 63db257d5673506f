//! Multi-task RGB-D scene analysis: a SwinV2-based RGB-D encoder, dense task
//! decoders, bottom-up panoptic post-processing and evaluation metrics, on a
//! small CPU tensor runtime.

pub mod encoder;
pub mod error;
pub mod heads;
pub mod kernels;
pub mod metrics;
pub mod model_io;
pub mod oracle;
pub mod panoptic;
pub mod pipeline;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use pipeline::{ImageAnalysis, Model, StageTimings};
pub use tensor::Tensor;
