pub mod autodiff;
pub mod component;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod sampling;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
