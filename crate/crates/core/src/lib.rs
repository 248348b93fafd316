pub mod checkpoint;
pub mod captioner;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod imaging;
pub mod localization;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
