//! Numerics for the logarithmic Schrödinger operator `(I-Δ)^log` and the
//! relativistic operators `(I-Δ)^s`: kernels, Fourier symbols, heat kernel,
//! Green function, Galerkin eigenvalue problems and their analysis.

pub mod analysis;
pub mod error;
pub mod fourier_op;
pub mod galerkin;
pub mod green;
pub mod kernel;
pub mod quadrature;
pub mod report;
pub mod special_fn;

pub use error::{Error, Result};
pub use kernel::{Kernel, KernelSpec, Order};
