//! Multi-writer to single-writer convergence: a deterministic network
//! simulator, six instrumented synchronization mechanisms, correctness
//! checkers, and an analyzer that derives the five-property profile of each
//! mechanism and verifies the quorum/fault-tolerance limits by enumeration.

pub mod analyzer;
pub mod checkers;
pub mod cli;
pub mod config;
pub mod mechanisms;
pub mod model;
pub mod rng;
pub mod runner;
pub mod simnet;
