pub mod error;
pub mod geometry;
pub mod pilot;
pub mod scene;
pub mod synth;
pub mod coarse;
pub mod refine;
pub mod sage;
pub mod recon;
pub mod crb;
pub mod harness;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
