//! File formats, dataset IO, the sweep runner and the `aenc` command line
//! built on top of `aenc-core`.

pub mod checkpoint;
pub mod cli;
mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod manifest;
pub mod report;
pub mod sweep;
pub mod tensor_file;

pub use config::RunConfig;
pub use error::{AencError, Result};
