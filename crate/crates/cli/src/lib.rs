//! Library surface of the command-line harness, kept separate from the
//! binary so tests can drive the commands directly.

pub mod commands;
pub mod config;
pub mod scenario;
pub mod seed;
