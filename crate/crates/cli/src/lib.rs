//! Experiment toolkit around the pruning core: configs, dataset loaders,
//! checkpoint files, metrics CSVs, signature-image dumps, and the
//! subcommand implementations behind the `pruneclust` binary.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod pgm;
pub mod report;
pub mod run;
