//! The `varkit` command line and the workbench HTTP API.

pub mod commands;
pub mod server;

pub use commands::main_with;
