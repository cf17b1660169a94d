//! Library surface of the `rise` command-line tool: run configuration
//! and pipeline orchestration, kept separate from argument parsing so
//! integration tests can drive runs directly.

pub mod config;
pub mod pipeline;
