pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod degrade;
pub mod discriminator;
pub mod error;
pub mod filters;
pub mod generator;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod ltas;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod stft;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
