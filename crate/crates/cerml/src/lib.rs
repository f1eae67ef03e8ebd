pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod repr;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
