//! Numerical laboratory for the Schrödinger equation with a Hartree
//! nonlinearity and a potential driven by a finite-state stationary Markov
//! process.
//!
//! The equation is written as
//!
//! ```text
//! i ψ_t − Δψ + V(x, ω(t)) ψ + ε (χ ∗ |ψ|²) ψ = 0
//! ```
//!
//! so the free flow is `e^{−itΔ}`, which is the spectral multiplier
//! `e^{+it|k|²}`. All solvers in this crate share that convention.
//!
//! Modules:
//! - [`grid`]: periodic grids, the unitary FFT, discrete Lebesgue/Lorentz norms.
//! - [`markov`]: generators, heat kernels and exact path sampling.
//! - [`potential`]: potential families, nontriviality checks, Hartree kernels.
//! - [`propagator`]: per-path split-step solver, Duhamel residual, Picard scheme.
//! - [`averaged`]: the deterministic averaged scalar and Liouville equations.
//! - [`ensemble`]: parallel Monte Carlo with conditional averages.
//! - [`spectral`]: the dissipative operator `−Δ + iA + V` and Kato–Birman checks.
//! - [`diagnostics`]: energies, identity residuals, decay fits, Strichartz norms.
//! - [`io`]: snapshot and CSV formats.
//! - [`verify`]: the end-to-end verification checks behind `verify-all`.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaged;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod potential;
pub mod propagator;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;
