//! Simulator for the stochastic thin-film equation with quadratic mobility on
//! a periodic interval, using an entropy-consistent implicit finite-difference
//! step, an exact random translation for the transport noise, and
//! Lie-Trotter splitting between the two.

pub mod banded;
pub mod cli;
pub mod config;
pub mod det_step;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod io;
pub mod mobility;
pub mod spectral;
pub mod splitting;
pub mod stats;
pub mod stoch_step;
pub mod validate;
pub mod wiener;

pub use error::{Result, SimError};
