//! Consistency scoring between images and attribute descriptions.
//!
//! An image is mapped into attribute space by a ReLU-linear embedding and
//! compared to an attribute vector with a learned Mahalanobis-style metric.
//! The resulting score is small when the pair is consistent, which supports
//! three downstream tasks: zero-shot classification against class attribute
//! signatures, few-shot fine-tuning from a handful of labelled examples of
//! new classes, and attribute-based image retrieval.
//!
//! Modules:
//! - [`model`]: the learned parameters and the score itself
//! - [`objective`]: loss terms and analytic gradients
//! - [`training`]: pair generation, minibatch SGD, restarts, grid search
//! - [`tasks`]: zero-shot / few-shot / retrieval applications and metrics
//! - [`data`]: dataset container format, synthetic generator, model files

pub mod data;
pub mod error;
pub mod model;
pub mod objective;
pub mod tasks;
pub mod training;

pub use data::{Dataset, SynthSpec};
pub use error::{Error, Result};
pub use model::{Model, PairLabel, Standardizer, Triplet};
pub use objective::{Gradients, HyperParams};
pub use tasks::{ClassDescriptor, PrPoint, RankedResult, RetrievalMode};
pub use training::{GridRow, GridSpec, PairConfig, TrainReport};
