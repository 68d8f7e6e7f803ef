//! Forward model and analysis tools for optically detected magnetic
//! resonance (ODMR) of V2 silicon-vacancy ensembles in 4H-SiC.
//!
//! - [`spin`]: spin-3/2 Hamiltonian, eigensolver, resonance frequencies.
//! - [`synth`]: Lorentzian spectra, photon-rate saturation, microwave power response, shot noise.
//! - [`estimation`]: damped Gauss-Newton fits of spectra and calibration curves.
//! - [`inversion`]: resonance pair -> (B0, theta).
//! - [`sensitivity`]: shot-noise sensitivity and its power dependence.
//! - [`format`]: the CSV layouts shared with other tools.

pub mod eigen;
pub mod error;
pub mod estimation;
pub mod format;
pub mod inversion;
pub mod lsq;
pub mod sensitivity;
pub mod spin;
pub mod synth;
pub mod units;

pub use error::{Error, Result};
pub use spin::{FieldVector, PhysicalConstants, TransitionPair};
