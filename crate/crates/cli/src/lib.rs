//! Library side of the `resattn` binary, so tests drive the same code.

pub mod commands;
pub mod config;

pub use config::RunConfig;
