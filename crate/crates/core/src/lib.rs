//! Detection and estimation of a Gaussian signal observed by a sensor network
//! whose amplify-and-forward transmissions add coherently at a fusion center
//! with many antennas.
//!
//! * [`scenario`] : network description, Rayleigh channels, observations
//! * [`np_detector`] / [`np_gains`] : Neyman-Pearson test and its power allocation
//! * [`lmmse`] : linear MMSE estimation of the signal
//! * [`energy`] / [`ed_gains`] : CSI-free energy detector and deflection-optimal allocation
//! * [`harness`] : seeded Monte Carlo experiments and CSV/manifest output

pub mod ed_gains;
pub mod energy;
pub mod error;
pub mod harness;
pub mod kv;
pub mod lmmse;
pub mod np_detector;
pub mod np_gains;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
