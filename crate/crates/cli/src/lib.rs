//! Command-line front end: dataset generation and ingestion, stream runs,
//! gate ablations and the subset-oracle comparison.

pub mod commands;
pub mod config;
pub mod dataset;
