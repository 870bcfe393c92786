pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod features;
pub mod model;
pub mod training;
pub mod synthetic;
pub mod probing;
pub mod analysis;
pub mod cli;
