//! Equivariant bifurcation analysis of the satellite and Maxwell-ring n-body problems.

pub mod cli;
pub mod config;
pub mod continuation;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod fourier;
pub mod spectral;
pub mod symmetry;
pub mod verification;

pub use error::{Error, Result};
