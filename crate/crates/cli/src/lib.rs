//! Configuration loading and subcommand implementations behind the
//! `sigtrust` binary.

pub mod commands;
pub mod config;
