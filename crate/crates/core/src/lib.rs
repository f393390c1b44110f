//! Three-stream multimodal fusion: per-modality GRU encoders over
//! precomputed video, image and text feature sequences, image-queried
//! cross-attention fusion, and a shallow classification/regression head,
//! all differentiated by a small reverse-mode engine.

pub mod audit;
pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod head;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
