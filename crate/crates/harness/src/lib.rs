//! Experiment harness and command-line front end for `dpols-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod design;
pub mod error;
pub mod output;
pub mod plot;
pub mod stats;
pub mod table;
