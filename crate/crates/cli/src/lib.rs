//! Command-line companion to `cvrkit-core`: file formats, experiment
//! configuration, and the training/evaluation harness behind the `cvrkit`
//! binary.

pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
