pub mod audio;
pub mod conditioning;
pub mod data;
mod error;
pub mod metrics;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod train;
pub mod unet;

pub use error::{CoreError, Result};
