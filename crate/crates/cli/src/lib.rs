//! Subcommand implementations behind the `ioc` binary.

pub mod commands;
pub mod config;
pub mod serve;
