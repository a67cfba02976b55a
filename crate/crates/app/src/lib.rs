//! Pipeline orchestration, configuration, durable annotation storage and
//! the annotation HTTP service.

pub mod cache;
pub mod config;
pub mod pipeline;
pub mod server;
pub mod store;
pub mod tables;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, Pipeline, PipelineError, RunManifest};
pub use server::{build_service, Service};
pub use store::{DurableStore, StoreError};
