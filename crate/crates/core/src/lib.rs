//! Multi-modal pedestrian crossing prediction.
//!
//! Bird's-eye-view maps and local scene crops are encoded by convolutional
//! stacks and fused into a visual embedding with softmax attention;
//! pedestrian and ego-vehicle motion pass through two LSTMs and a temporal
//! attention stage. A small dense head turns both into a crossing probability.
//!
//! The crate also holds the data pipeline that turns annotated tracks into
//! fixed-length observation samples, the training loop, evaluation metrics
//! and a synthetic world generator for controlled experiments.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
