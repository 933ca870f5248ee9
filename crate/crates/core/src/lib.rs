//! Scene graph generation from pixels with associative embeddings.
//!
//! A convolutional model marks graph vertices and edges as heatmap peaks,
//! fills a fixed set of unordered per-pixel output slots (supervised
//! through optimal assignment), and links every edge to its endpoints by
//! nearest embedding.

pub mod decoder;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod graphmodel;
pub mod harness;
pub mod scenegen;
pub mod supervision;

pub use error::{Error, Result};
