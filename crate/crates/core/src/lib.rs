pub mod adapters;
pub mod audio;
pub mod embedding;
pub mod error;
pub mod mcadams;
pub mod pipeline;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
