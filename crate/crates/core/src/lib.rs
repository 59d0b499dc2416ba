//! Score-based pruning of randomly initialized networks with iterative
//! re-randomization of pruned weights, plus an empirical lab for the
//! approximation bounds behind it.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distributions;
pub mod harness;
pub mod masked;
pub mod ops;
pub mod optim;
pub mod randomize;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod training;

#[cfg(test)]
mod testing;
