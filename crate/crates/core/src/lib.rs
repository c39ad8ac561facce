//! A priori sparse linear cascades.
//!
//! Generates layered sparse topologies (random, Clos, butterfly, hypercube,
//! torus, low-rank, parallel butterfly), initializes them with a
//! sparsity-corrected Xavier scheme, trains them to reconstruct matrices,
//! bounds the number of exactly reconstructible entries with a bipartite
//! matching, and scores them with a data-free controllability heuristic.

#[cfg(feature = "cli")]
pub mod cli;
pub mod control;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod init;
pub mod matching;
pub mod topology;

pub use error::{Error, Result};
