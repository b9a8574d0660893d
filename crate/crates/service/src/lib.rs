//! HTTP service and command-line front end of the role-play dialogue engine.

pub mod app;
pub mod cli;
pub mod config;
