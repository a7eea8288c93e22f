//! Wavefront path tracing with normalized Russian roulette and splitting.

pub mod bench;
pub mod cache;
pub mod neural;
pub mod error;
pub mod math;
pub mod mixdepth;
pub mod rng;
pub mod rrs;
pub mod sampling;
pub mod scene;
pub mod wavefront;

pub use error::{Error, Result};
