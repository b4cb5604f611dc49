//! File formats, throughput measurement and the command-line workflow
//! around `fgv-core`.

pub mod bench;
pub mod ckpt;
pub mod cli;
pub mod config;
mod error;
pub mod manifest;
pub mod pnm;
pub mod report;

pub use error::{Error, Result};
