pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluator;
pub mod feature_io;
pub mod numerics;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
