//! Numerical laboratory for removable singularities of Hölder continuous
//! quasiregular maps: Beltrami solvers, Cantor covers and the pairing bounds.

pub mod analysis;
pub mod beltrami;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod plot;
pub mod removability;
pub mod transforms;

pub use error::{Error, Result};
pub use grid::{ComplexField, DerivativeMethod, GridSpec, Mask, Region};
pub use num_complex::Complex64;
