//! No-reference video quality assessment from multi-level spatially pooled
//! (MLSP) deep features.
//!
//! Frames are passed through a pretrained backbone, every tapped block is
//! globally average pooled, and the concatenated per-frame vectors feed one
//! of three small regression heads. Around that pipeline sit the evaluation
//! tools: split protocols, correlation metrics, dataset coverage analysis and
//! subjective-score statistics.

pub mod coverage;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod seed;
pub mod subjective;

pub use error::{Error, Result};
