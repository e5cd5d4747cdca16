pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod networks;
pub mod pipeline;
pub mod seed;
pub mod workflow;

pub use error::{Error, ErrorCategory, Result};
