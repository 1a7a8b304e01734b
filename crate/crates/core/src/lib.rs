//! Simulation and analysis of Stokes / anti-Stokes photon-pair statistics
//! from pulsed Raman scattering.
//!
//! * [`model`]: rate constants and closed-form expectations
//! * [`sim`]: per-pulse Monte Carlo, time tags and power sweeps
//! * [`tagstore`]: the RTG1 time-tag file format
//! * [`correlator`]: coincidence histograms, pulse-comb peaks, g2
//! * [`powerfit`]: weighted polynomial and power-law fits

pub mod correlator;
pub mod model;
pub mod powerfit;
pub mod rng;
pub mod sampling;
pub mod sim;
pub mod tagstore;

pub use model::{ModelConfig, RateConstants, StokesStatistics};
pub use tagstore::TagStream;
