//! Fluorescence state readout of a single trapped atom.
//!
//! * [`counting`]: exact photon-count distributions with one-way leakage.
//! * [`sim`]: seeded Monte Carlo of time-tagged readout trials.
//! * [`analysis`]: time-resolved error rates and threshold fidelity.
//! * [`fitting`]: bright-state error fits with bootstrap uncertainties.
//! * [`atomic`]: rate-equation model of the ground sublevels under probing.
//! * [`io`] and [`cli`]: file formats, configuration and the command line.

pub mod analysis;
pub mod atomic;
pub mod cli;
pub mod counting;
pub mod error;
pub mod fitting;
pub mod io;
pub mod sim;

pub use error::{Error, Result};
