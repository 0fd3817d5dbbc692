//! File formats and the command-level workflows built on them.

pub mod analyze;
pub mod config;
pub mod report;
pub mod results;
pub mod simulate;
pub mod trial_csv;
