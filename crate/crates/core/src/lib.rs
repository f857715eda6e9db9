//! Random counting measures built by stone throwing: counting laws closed
//! under thinning, spatial and marked constructions, the bone functional
//! equation, and applications to retail spend, SIR epidemics and traffic.

pub mod bone;
pub mod cli;
pub mod compound;
pub mod counting;
pub mod error;
pub mod rng;
pub mod sir;
pub mod stats;
pub mod stc;
pub mod traffic;

pub use error::{Error, Result};
