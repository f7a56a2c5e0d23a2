//! Command-line front end for kscore: CSV ingestion, run configuration and
//! report emission.

pub mod commands;
pub mod config;
pub mod io;
