//! Command-line front end for the trajectory supervisor.

pub mod args;
pub mod commands;
pub mod config;
pub mod gen;
