//! Long-recording speech classification with a selective-scan state-space
//! backbone.

pub mod alloc_track;
pub mod audio;
pub mod error;
pub mod eval;
pub mod infer;
pub mod linalg;
pub mod manifest;
pub mod par;
pub mod pipeline;
pub mod segment;
pub mod ssm;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
