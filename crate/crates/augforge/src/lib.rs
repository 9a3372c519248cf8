//! Conditional-GAN data augmentation for low-resource classification over
//! fixed-dimensional feature vectors.
//!
//! The pipeline: train a baseline classifier on the small labeled set, train
//! a three-component conditional GAN (generator, discriminator, frozen
//! baseline classifier) with pre-training on a larger external set plus the
//! usual stabilization tricks, sample labeled fake feature vectors from the
//! generator, then measure what the fake data buys — classifier accuracy
//! with significance tests, confidence-score bagging, dataset-size sweeps,
//! and a t-SNE view of real versus fake points.
//!
//! Modules:
//! - [`nn`]: dense-network engine (forward, backprop, losses, optimizers, IO)
//! - [`data`]: dataset CSV ingestion, splits, batching, synthetic benchmarks
//! - [`cgan`]: the conditional GAN itself
//! - [`eval`]: classifier training, significance tests, bagging, size sweeps
//! - [`tsne`]: exact t-SNE for the real-vs-fake distribution analysis
//! - [`config`]: the flat `key=value` run-configuration format

pub mod cgan;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod tsne;

pub use error::{Error, Result};
pub use linalg::Matrix;
