//! Numerical core for stable-driven and Brownian SDEs.
//!
//! Everything here is allocation-only (`alloc`), so the crate builds without `std`:
//! sampling of stable increments by Brownian subordination, Euler–Maruyama
//! ensembles, quadrature of the nonlocal generator, Wasserstein-1 estimators,
//! Eberle-type comparison functions and jump-coupling overlap integrals.
//!
//! Conventions follow the rotationally invariant normalization
//! `E exp(i<z, L_t>) = exp(-t |z|^alpha / 2)` throughout; at `alpha = 2` this is
//! standard Brownian motion.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod coupling;
pub mod error;
pub mod generator;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod special;
pub mod stable;
pub mod stats;
pub mod wasserstein;

mod math {
    #[allow(unused_imports)]
    pub(crate) use num_traits::Float;
}

pub use error::{Error, Result};
