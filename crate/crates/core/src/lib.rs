//! Extremum-seeking calibration of trapped-ion two-qubit gates.
//!
//! The crate simulates a pair of trapped-ion qubits whose gate parameters
//! drift, measures gate quality with a randomized-benchmarking objective,
//! and closes the loop with a sinusoidal-perturbation extremum-seeking
//! controller.

pub mod config;
pub mod drb;
pub mod error;
pub mod esc;
pub mod harness;
pub mod ion;
pub mod quantum;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
