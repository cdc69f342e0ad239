//! File formats, synthetic datasets, the experiment pipeline and the CLI
//! plumbing around [`occface_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod stages;

pub use error::{AppError, AppResult};
