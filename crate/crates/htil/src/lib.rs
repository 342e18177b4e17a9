//! Audio front-end, file formats and the experiment driver for Hebbian
//! task-incremental learning. The numeric core lives in `htil-core`.

pub mod audio;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod esc;
pub mod experiment;
pub mod report;

pub use cli::run;
pub use error::{Error, Result};
