//! Binary containers, dataset directories, synthetic data and feature caches.

pub mod cache;
pub mod container;
pub mod dataset;
pub mod synthetic;

pub use container::{ContainerKind, TensorContainer};
pub use dataset::{Dataset, Sample};
