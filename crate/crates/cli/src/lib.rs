//! Command-line front end and experiment drivers for `qcforest`.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod synth;
