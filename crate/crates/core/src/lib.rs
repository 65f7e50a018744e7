//! Exactly solvable interacting diffusions built from the Pearson class.
//!
//! A Pearson diffusion has generator `L = a(x) d²/dx² + b(x) d/dx` with
//! quadratic `a` and affine `b` on an interval `(l, r)`. This crate implements,
//! for systems of `N` such particles,
//!
//! * closed-form transition densities and their derivatives ([`pearson`]),
//! * the backward/forward action of `e^{tL}` on polynomials ([`polyflow`]),
//! * the determinantal kernels of one-sided-collision chains and non-colliding
//!   systems ([`kernels`]),
//! * Fredholm determinants of those kernels via block Nyström discretization
//!   ([`fredholm`]),
//! * Monte Carlo simulators for the same laws ([`simulate`]),
//! * and a named validation suite tying them together ([`checks`]).

pub mod error;
pub mod quad;

pub mod fredholm;
pub mod kernels;
pub mod pearson;
pub mod polyflow;
pub mod simulate;

pub use error::{Error, Result};
pub use fredholm::{DetReport, FredholmConfig, QuadratureGrid};
pub use kernels::{ExtendedKernel, IndexDomain, KernelConfig, KernelIndex};
pub use pearson::{DensityProvider, Family, LevelSystem, PearsonSpec, Side};
pub use polyflow::Poly;
pub use simulate::{ArraySamples, ArrayState, SamplePaths, SimConfig};
