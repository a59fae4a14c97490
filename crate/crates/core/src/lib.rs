#![no_std]
extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod math;
pub mod data;
pub mod nn;
pub mod encoder;
pub mod kb;
pub mod forecast;
pub mod reasoning;
pub mod eval;

pub use error::{Error, Result};
