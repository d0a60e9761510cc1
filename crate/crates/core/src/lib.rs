pub mod analysis;
pub mod conditioning;
pub mod controllers;
pub mod data;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
