//! Simulation of laser-controlled molecular rotation for linear molecules.
//!
//! The crate evolves rotational wave packets |ψ⟩ = Σ c_{N,M} |N,M⟩ under
//! impulsive pulse trains (including chiral trains) and adiabatic
//! optical-centrifuge fields, and synthesizes the observables used to
//! characterize the resulting states: rotational population distributions,
//! directionality, coherent Raman spectrograms, angular probability
//! densities, and revival analysis with centrifugal distortion.
//!
//! Start from [`molecule::MoleculeDb`] for constants, build an excitation
//! with [`fields::FieldProgram`], evolve with [`propagator::run_program`] or
//! [`propagator::run_ensemble`], and extract observables from the resulting
//! trajectories with the [`observables`] module. The `examples/` directory
//! has one runnable program per capability; a thin `superrotor` binary runs
//! the same machinery from plain-text config files.

pub mod angular;
pub mod config;
pub mod constants;
pub mod error;
pub mod fields;
pub mod molecule;
pub mod observables;
pub mod output;
pub mod propagator;
pub mod runner;

pub use error::{Error, Result};
