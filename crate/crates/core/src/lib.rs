pub mod attack;
pub mod augment;
pub mod classifier;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod refine;
pub mod tensor;

pub use error::{Error, Result};
