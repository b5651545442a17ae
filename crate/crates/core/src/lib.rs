#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ann;
pub mod beamwalk;
pub mod dataset;
pub mod error;
pub mod linreg;
pub mod optics;
pub mod plant;
pub mod regression;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
