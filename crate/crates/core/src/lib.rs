pub mod bayes;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod estimate;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod observation;
pub mod wavesolver;

pub use error::{Error, Result};
