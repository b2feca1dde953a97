//! File formats, parallel evaluation and the command-line driver around
//! [`coopens_core`].
//!
//! - [`idx`] and [`corpus`]: IDX image/label files and dataset directories.
//! - [`checkpoint`]: the binary ensemble checkpoint.
//! - [`report`]: evaluation reports and the aggregate table.
//! - [`settings`]: `key=value` config files overlaid by flags.
//! - [`parallel`]: rayon-backed episodic evaluation.
//! - [`cli`]: the subcommands.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod idx;
pub mod kv;
pub mod parallel;
pub mod report;
pub mod settings;

pub use error::{Error, Result};
