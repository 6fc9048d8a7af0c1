//! Surface-code syndrome decoding benchmark: lattice construction, noise
//! sampling, dataset generation, neural and classical decoders, training
//! and benchmarking.

pub mod bench;
pub mod bits;
pub mod dataset;
pub mod decoders;
pub mod error;
pub mod gradcheck_suite;
pub mod lattice;
pub mod noise;
pub mod rng;
pub mod training;

pub use error::{QecError, Result};
