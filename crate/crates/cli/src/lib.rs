//! Pipeline subcommands and the live directive service.

pub mod commands;
pub mod config;
pub mod protocol;
pub mod serve;
