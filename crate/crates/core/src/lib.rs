pub mod attention;
pub mod autodiff;
pub mod csbm;
pub mod error;
pub mod graph;
pub mod io;
pub mod noise;
pub mod rng;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
