//! Collision-coupled map lattices: site maps, lattice dynamics, Ulam transfer
//! operators, Monte Carlo rare-event statistics and closed-form extremal indices.

pub mod error;
pub mod interval_map;
pub mod lattice;
pub mod rational;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod ulam;

pub use error::{Error, Result};
