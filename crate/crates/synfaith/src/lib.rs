//! Command-line companion to `synfaith-core`: configuration, corpus
//! manifests, attribution files, the JSON-lines value-function protocol and
//! the workflows behind each subcommand.

pub mod attributions;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod protocol;
pub mod records;

pub use error::{AppError, Result};
