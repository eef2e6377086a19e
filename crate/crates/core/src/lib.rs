pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod model_check;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
