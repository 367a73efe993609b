//! Quantum parameter estimation toolkit.
//!
//! Computes asymptotic (QFIM, CFIM, Holevo) and Bayesian metrological bounds and
//! searches for optimal probe states, control pulses and measurements.
//! The crate is `no_std` with `alloc`; the `std` feature only switches the math
//! backend from `libm` to the platform implementation.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod prelude;

pub mod adaptive;
pub mod asymptotic;
pub mod bayes;
pub mod dynamics;
pub mod engines;
pub mod error;
pub mod hcrb;
pub mod linalg;
pub mod models;
pub mod random;
pub mod scenarios;
pub mod sdp;
pub mod sic;
pub mod state;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, RMat, C64};
pub use state::{DerivedState, Povm};
