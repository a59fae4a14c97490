//! File formats, the remote reasoner client and the command layer of the
//! strata pipeline. The numerical work lives in `strata_core`.

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod kbfile;
pub mod llm;
pub mod sft;
pub mod tokens;

pub use error::{Error, Result};
