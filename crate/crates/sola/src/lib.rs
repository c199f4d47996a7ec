//! Language-aligned track selection for referring video object segmentation.
//!
//! Given candidate object-token tracks, their binary mask tracks, and a text
//! embedding of a referring expression, this crate trains and runs a module
//! that scores each track's alignment with the expression, selects tracks
//! above a threshold, merges their masks into one output track, and evaluates
//! it with region/boundary metrics.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod mask;
pub mod selector;
pub mod supervision;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
