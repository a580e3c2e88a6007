//! Wavelet bases, Besov-type norms and best n-term approximation on
//! polyhedral surfaces, with a double layer potential solver.

pub mod approx;
pub mod bem;
pub mod error;
pub mod jet;
pub mod quadrature;
pub mod report;
pub mod cli;
pub mod models;
pub mod spaces;
pub mod surface;
pub mod wavelet;

pub use error::{Error, Result};
