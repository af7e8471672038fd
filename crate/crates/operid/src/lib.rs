//! Open-set person re-identification benchmark library.
//!
//! Implements the full pipeline: sliding-window color/texture descriptors,
//! PCA dimension reduction, similarity metric learning (Euclidean,
//! Mahalanobis, KISSME, RRDA), a seeded multi-trial train/test protocol,
//! and open-set evaluation via detection-and-identification rate (DIR)
//! versus false accept rate (FAR), with ROC and CMC reporting.

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod reduce;
pub mod seed;
pub mod synth;

pub use error::Error;
