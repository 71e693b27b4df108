//! Effective Hamiltonian and effective drift of small-noise periodic mean
//! field games, computed from the ergodic cell problem on the unit torus.

pub mod cell;
pub mod cli;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod potential;
pub mod qualitative;
pub mod sensitivity;

pub use error::{Error, Result};
