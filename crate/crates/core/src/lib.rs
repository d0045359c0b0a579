//! Transient modeling and state estimation for natural-gas pipeline networks.
//!
//! The crate builds a linear discrete-time state-space model of a pipeline
//! network from its topology (an implicit box differencing scheme applied to
//! the isothermal flow equations), simulates ground-truth dynamics and noisy
//! SCADA-style measurements, and estimates the full state with either a
//! classical Kalman filter or a robust variant that rescales measurement
//! variances from the observed innovation statistics.
//!
//! The crate is `no_std` + `alloc`; parsing of the on-disk file formats and
//! all I/O live in the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod estim;
pub mod metrics;
pub mod model;
pub mod network;
pub mod sim;

pub use error::CoreError;
