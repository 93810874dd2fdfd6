//! Pedestrian attribute recognition from frozen vision and text transformer
//! encoders, fused per attribute with multi-head cross-attention.

pub mod attention;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod heads;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod training;

pub use config::{Ablation, AttributeSpec, EncoderConfig, LossConfig, ModelConfig, OptimizerKind, TrainConfig};
pub use error::{Error, Result};
pub use tensor::Tensor;
