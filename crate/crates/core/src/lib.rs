pub mod config;
pub mod denoise;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod imageio;
pub mod mask;
pub mod morphology;
pub mod morphometry;
pub mod postprocess;
pub mod pipeline;
pub mod proposals;
pub mod stacking;
pub mod synthgen;

pub use error::{Error, Result};
