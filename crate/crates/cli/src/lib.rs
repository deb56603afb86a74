//! Library surface of the pipeline driver, so integration tests and the
//! binary share one implementation.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use manifest::Manifest;
