//! Configuration handling and subcommands of the `compsim` binary.

pub mod commands;
pub mod config;
pub mod output;
