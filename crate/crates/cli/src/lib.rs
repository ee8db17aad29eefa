//! Command-line front end: configuration, the pipeline commands and run
//! directory persistence.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod rundir;
