//! Batch driver for `lifecycle-core`: JSON run configurations, CSV/JSON
//! artifacts with checksums, and the `lifecycle` command-line tool.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod oracle;
pub mod verify;
