//! Clustering-based random forests.
//!
//! Each tree splits its nodes by k-means under a feature-weighted squared
//! Euclidean distance, where the weights measure how strongly each feature
//! relates to the label. The weights are kept as sufficient statistics so a
//! forest can absorb new batches of data while updating its weights in time
//! proportional to the batch alone.

pub mod baseline;
pub mod clustering;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod feature_weights;
pub mod forest;
pub mod inference;
pub mod persist;
pub mod rng;

pub use error::{Error, Result};
