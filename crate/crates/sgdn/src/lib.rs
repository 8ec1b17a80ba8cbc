//! IO, configuration and commands for the dehazing network.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;
pub mod runlog;
