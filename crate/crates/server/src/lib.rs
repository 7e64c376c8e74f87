//! Command line and HTTP front end for the cloudseed pipeline.

pub mod commands;
pub mod config;
pub mod http;
