//! Threads, files and command line around `spf-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod orchestrator;
pub mod persist;
pub mod report;

pub use error::{Error, Result};
