//! Dataset IO, checkpoints, reports and the command-line harness around
//! `fusionet-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod reports;
pub mod synth;
pub mod workers;

pub use error::{Error, Result};
