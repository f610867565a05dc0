pub mod controller;
pub mod error;
pub mod export;
pub mod plant_sim;
pub mod robustness;
pub mod sensing_model;
pub mod si_analysis;
pub mod spectral;

pub use error::{Error, Result};
