//! File formats, orchestration and the command-line front end for
//! `gcmc-core`.
//!
//! - [`ingest`]: MovieLens parsers and dataset loading with checksums
//! - [`config`]: TOML run configuration with a closed key set
//! - [`checkpoint`]: binary parameter container
//! - [`run`]: per-seed training runs, resume, parallel jobs and reports
//! - [`cli`]: the `gcmc` command

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod run;
