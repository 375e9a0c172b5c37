//! Numerical laboratory for the hydrodynamic `(R, S)` form of a
//! Galilean-invariant nonlinear modification of the Schrödinger equation.

pub mod calculus;
pub mod error;
pub mod fields;
pub mod dynamics;
pub mod model;
pub mod scenario;
pub mod separability;
pub mod snapshot;
pub mod observables;
pub mod spectral;
pub mod stationary;
pub mod symmetry;

pub use error::{Error, Result};
