//! Standard-library companion to `fedcl-core`: file formats (IDX datasets,
//! key=value configs, CSV/JSONL metrics), the dataset supply pipeline, and
//! the parallel client executor behind the `fedcl` binary.

pub mod config;
pub mod error;
pub mod idx;
pub mod metrics;
pub mod runner;
pub mod selftest;

pub use error::CliError;
