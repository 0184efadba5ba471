pub mod activations;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod disc;
pub mod dsp;
pub mod error;
pub mod features;
pub mod frontend;
pub mod generator;
pub mod model;
pub mod nn;
pub mod trainer;
pub mod vc;

pub use error::{Error, Result};
