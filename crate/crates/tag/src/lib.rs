//! File formats, experiment drivers and the command-line interface around
//! `tag-core`.

pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod fsutil;
pub mod report;
pub mod vocab_file;

pub use error::{Error, Result};
