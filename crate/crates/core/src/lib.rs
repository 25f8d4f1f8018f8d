//! Simulation and analysis of optically addressable spin-1 defects coupled to
//! nuclear-spin baths.
//!
//! Units used throughout the crate: frequencies and energies in MHz of
//! ordinary (non-angular) frequency, magnetic fields in Gauss, times in
//! microseconds. The electronic spin always occupies register position 0 and
//! every spin basis is ordered by descending magnetic quantum number.

pub mod dynamics;
pub mod effective;
pub mod error;
pub mod esr;
pub mod fit;
pub mod format;
pub mod hamiltonian;
pub mod isotope;
pub mod scenario;
pub mod spin;

pub use error::{Error, Result};

/// Electronic gyromagnetic ratio, MHz/G.
pub const GAMMA_E: f64 = 2.8;

/// Ground-state zero-field splitting, MHz.
pub const D_GS: f64 = 3480.0;

/// Ratio of the electronic to the 15N gyromagnetic ratio magnitude.
pub const GAMMA_E_OVER_GAMMA_15N: f64 = 6487.0;
