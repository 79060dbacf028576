//! Spherical harmonic transforms on Fibonacci, equiangular and icosahedral grids.

pub mod descriptors;
pub mod error;
pub mod grids;
pub mod harmonics;
pub mod quadrature;
pub mod shapes;
pub mod spatial;
pub mod transform;

pub use error::{Error, Result};
