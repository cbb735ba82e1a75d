//! Transient synchronization stability of a grid-following converter behind
//! a PLL, connected to a grid-forming MMC through a cable network.
//!
//! The crate is organised bottom-up:
//! [`model`] holds the two-state PLL dynamics and their equilibria,
//! [`network`] turns physical network data into per-unit stages,
//! [`sim`] integrates a fault sequence and classifies it,
//! [`lyapunov`] and [`eac`] provide the energy-based assessments, and
//! [`analysis`] cross-checks them against brute-force simulation.

pub mod analysis;
pub mod config;
pub mod eac;
pub mod error;
pub mod lyapunov;
pub mod model;
pub mod network;
pub mod output;
pub mod sim;

pub use error::{Error, Result};
