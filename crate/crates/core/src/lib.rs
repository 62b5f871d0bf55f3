//! Bit-exact binary neural network inference for sound event detection.
//!
//! The pipeline runs from 16 kHz mono audio through a log-Mel frontend, a
//! fixed-point first layer, five xor/popcount binary convolution layers and
//! a fixed-point classifier with global average pooling. Everything after the
//! frontend is integer arithmetic and therefore deterministic.

pub mod accounting;
pub mod bench;
pub mod error;
pub mod executor;
pub mod frontend;
pub mod kernels;
pub mod model;
pub mod network;
pub mod oracle;
pub mod tensors;

pub use error::{Error, Result};
