//! Linear waveguide channels driven through the scalar wave equation:
//! modal channel operators, boundary sources by transposition, Gaussian
//! channel kernels, mutual information estimators and capacity-achieving
//! source weights.

pub mod capacity;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod modes;
pub mod mutual_info;
pub mod oscillator;
pub mod quadrature;
pub mod rng;
pub mod transposition;
pub mod weights;

pub use error::{Error, Result};
