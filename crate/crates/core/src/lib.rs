//! Roofline performance model for LLM inference on clusters of
//! conventional and "Lite" GPUs, plus die-yield economics.

pub mod cli;
pub mod error;
pub mod hardware;
pub mod report;
pub mod roofline;
pub mod search;
pub mod workload;

pub use error::{Error, Result};
