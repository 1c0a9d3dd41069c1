pub mod admm;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fantope;
pub mod fpca;
pub mod linalg;
pub mod pipeline;
pub mod sim;
mod spectrum;
pub mod tuning;

pub use error::{Error, Result};
