//! Data-centric experiments on small image classifiers.
//!
//! The crate trains desk-scale networks while recording how every training
//! sample is classified after each epoch, and uses those traces to study
//! which samples help or hurt: confidence/illusiveness subgroups, an extra
//! category of synthetic noise images, removal of consistently misclassified
//! ("illusive") samples, splitting confused categories with a lookup table,
//! and robustness to fast-gradient-sign perturbations.
//!
//! Modules:
//! - [`nn`]: dense/conv networks, losses, gradients, SGD.
//! - [`data`]: images, labeled datasets, CIFAR-10 binary IO, step data,
//!   procedural image sets.
//! - [`noise`]: noise-category generators.
//! - [`trace`]: per-sample epoch records and cumulative confusion.
//! - [`select`]: subgroups, exclusion, relabel plans.
//! - [`adv`]: FGSM and robustness evaluation.
//! - [`metrics`]: accuracy/confidence metrics and multi-run aggregation.

pub mod adv;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod select;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
pub use tensor::TensorBuffer;
