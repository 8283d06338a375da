//! Early-exit video event recognition over precomputed frame and object features.

pub mod error;
pub mod gating;
pub mod head;
pub mod kernel;
pub mod pipeline;
pub mod policy;

pub use error::{Error, Result};
