pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod generation;
mod nn;
pub mod scanet;
pub mod tensor;
pub mod training;
pub mod vsen;

pub use error::{Error, Result};
