//! Multi-encoder, multi-gated Transformer captioner with coverage control.

pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod synth;
pub mod text;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use par::Execution;
