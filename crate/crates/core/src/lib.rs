//! Liouville first-passage percolation on lattice approximations of the
//! Gaussian free field, with tools for checking its conformal covariance.

pub mod cli;
pub mod conformal;
pub mod error;
pub mod experiments;
pub mod gff;
pub mod grid;
pub mod kernels;
pub mod lfpp;
pub mod manifest;
pub mod quad;
pub mod rng;
pub mod scaling;
pub mod stats;

pub use error::{Error, Result};
