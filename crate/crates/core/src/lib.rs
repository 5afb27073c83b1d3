//! Lorentz gas in the weak-coupling regime with a slowly varying mean-field
//! background: microscopic Hamiltonian dynamics, the limiting kinetic
//! processes, and their diffusive hydrodynamic limit.

pub mod error;
pub mod hydro;
pub mod kinetics;
pub mod micro;
pub mod obstacles;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod scaling;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
