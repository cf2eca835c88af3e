//! Patch-wise unsupervised anomaly detection: autoencoder latents scored by
//! random tensorized sum-product networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`nn`]: dense tensors, layers with manual backward passes, Adam.
//! - [`ae`]: convolutional, β-variational and vector-quantised autoencoders.
//! - [`circuit`]: region graphs, RAT-SPN materialisation and exact inference.
//! - [`em`]: (stochastic) expectation-maximisation for circuit parameters.
//! - [`pipeline`]: synthetic data, patch extraction, heatmap scoring.
//! - [`eval`]: AUC, Hausdorff distance and score histograms.

pub mod error;
pub mod records;
pub mod seed;
pub mod tensor;
pub mod nn;
pub mod ae;
pub mod circuit;
pub mod em;
pub mod eval;
pub mod grid;
pub mod pipeline;

pub use error::{Error, Result};
pub use tensor::Tensor;
