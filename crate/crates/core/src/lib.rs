//! Training-free reference-based instance segmentation.
//!
//! The engine consumes dense patch features and class-agnostic mask proposals
//! produced by frozen external models. A few annotated reference images are
//! pooled into per-category prototypes (the memory bank); target proposals are
//! classified by cosine similarity against those prototypes, de-duplicated
//! with NMS and semantic-aware soft merging, and evaluated with COCO-style
//! metrics.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod matching;
pub mod memory_bank;
pub mod merging;
pub mod pipeline;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
