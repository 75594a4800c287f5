//! Resource-lean macro architecture search for anisotropic 3D segmentation.
//!
//! A recurrent controller samples whole-network hyperparameters (patch size,
//! pooling strides, dilations, activation, skip topology) from a schema built
//! out of dataset statistics. Every sampled child network is a subgraph of one
//! shared-weight supernet, so candidates are scored without retraining.

pub mod controller;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod par;
pub mod searchspace;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
