//! Scenario configuration, CSV artifacts, task execution and the
//! adaptive-session service behind the `qmetro` binary.

pub mod config;
pub mod csvio;
pub mod error;
pub mod tasks;
pub mod service;
