//! Active indexing for image copy detection.
//!
//! The crate bundles five pieces that are used together:
//!
//! - [`imagelab`]: float RGB rasters, a procedural corpus, the query
//!   transformation suite and image-quality metrics.
//! - [`extractor`]: a small deterministic convolutional feature extractor with
//!   exact input gradients.
//! - [`index`]: k-means, IVF-PQ (with optional OPQ rotation), IVF-Flat and
//!   PCA+LSH indexes with ADC / Hamming search and a binary file format.
//! - [`activation`]: the just-noticeable-difference model, indexation losses,
//!   Adam and the image activation loop.
//! - [`eval`]: R@1, micro-AP, IVF failure probability and the experiment
//!   runner that produces reports.

pub mod activation;
mod binio;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod imagelab;
pub mod index;
pub mod seed;

pub use error::{Error, Result};
