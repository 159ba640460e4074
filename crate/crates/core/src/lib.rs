//! Recover-then-discriminate anomaly detection.
//!
//! The pipeline recovers a normal-looking version of a query image from its
//! HOG rendering plus the most similar normal training image (never from the
//! query pixels themselves), then compares frozen backbone features of the
//! query against learned features of the recovery. Per-location cosine
//! distances form the anomaly map.
//!
//! Everything runs on a small from-scratch reverse-mode autodiff engine
//! ([`autodiff`]) in 32-bit floats. With the `parallel` feature (default),
//! per-image work is spread over rayon; reductions always fold in a fixed
//! order so results are bit-identical for any thread count.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod descriptors;
pub mod discriminate;
mod error;
pub mod par;
pub mod recover;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
