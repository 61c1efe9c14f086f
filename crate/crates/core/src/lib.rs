//! Plastic neural memory networks for sequence anomaly classification.
//!
//! A two-layer LSTM encoder feeds an external memory stack whose read,
//! output and write controllers mix fixed weights with trainable Hebbian
//! plasticity; a dense softmax head classifies the final memory output. An
//! attention-only memory with LSTM controllers is provided as the baseline.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the 64-bit variant used for training and
//! gradient checking.

pub mod analysis;
pub mod data;
pub mod error;
mod inference;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod plastic;
pub mod recurrent;
pub mod scalar;
pub mod training;

pub use data::LabeledSequence;
pub use error::{Error, Result};
pub use memory::{MemoryInit, MemoryKind};
pub use model::{Checkpoint, Classifier, ModelConfig, Oracle, TraceLifetime};
pub use numerics::{Graph, Matrix, ParameterTape};
pub use scalar::Scalar;
pub use training::{evaluate, train, TrainConfig};

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type ParameterTape64 = numerics::ParameterTape<f64>;
pub type Classifier64 = model::Classifier<f64>;
pub type Classifier32 = model::Classifier<f32>;
pub type LabeledSequence64 = data::LabeledSequence<f64>;
