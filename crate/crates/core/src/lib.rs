//! Finite-difference schemes for the stochastic heat equation on `[0,1]^d`
//! driven by noise that is white in time and Riesz-correlated in space.

pub mod error;
pub mod green;
pub mod lattice;
pub mod noise;
pub mod operators;
mod quadrature;
pub mod schemes;
pub mod study;

pub use error::{Error, Result};
