//! Periodic spatial grids, wave fields on them, the unitary discrete Fourier
//! transform and the discrete norms used throughout the crate.
//!
//! The box is `[−L/2, L/2)^d` with `n` points per axis (a power of two) and
//! spacing `h = L/n`. Fields are stored row-major over the axes. Every norm is
//! weighted by the cell volume `h^d`, so values approach continuum norms
//! under refinement.

mod fourier;
mod norms;

pub use fourier::{laplacian_symbol, phase_multiplier, Fourier};
pub use norms::{
    dyadic_shell_norm, intersection_norm, lebesgue_norm, lebesgue_norm_weighted, lorentz_norm, lorentz_norm_weighted,
    sum_norm, sum_norm_weighted,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Upper bound on `n^d` accepted by [`SpatialGrid::new`].
pub const DEFAULT_POINT_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    n: usize,
    length: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::with_budget(dim, n, length, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(dim: usize, n: usize, length: f64, budget: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("points per axis must be a power of two >= 2, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {length}")));
        }
        let total = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(n));
        match total {
            Some(t) if t <= budget => {}
            _ => return Err(Error::InvalidGrid(format!("{n}^{dim} points exceed the budget of {budget}"))),
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// `h = L/n`; exact because `n` is a power of two.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of points `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of index `j` along one axis.
    pub fn coordinate(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.spacing()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = flat;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &j| acc * self.n + j)
    }

    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).into_iter().map(|j| self.coordinate(j)).collect()
    }

    /// Signed frequency of FFT index `j`: `0, 1, …, n/2−1, −n/2, …, −1`.
    pub fn signed_frequency(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_frequency(j) as f64 / self.length
    }

    /// Index of the point `−x` (the origin sits at index `n/2` on each axis).
    pub fn reflect(&self, flat: usize) -> usize {
        let idx: Vec<usize> = self.multi_index(flat).into_iter().map(|j| (self.n - j) % self.n).collect();
        self.flat_index(&idx)
    }

    /// Index of `x + shift·h` with periodic wrap-around.
    pub fn shift(&self, flat: usize, shift: &[i64]) -> usize {
        let n = self.n as i64;
        let idx: Vec<usize> = self
            .multi_index(flat)
            .into_iter()
            .enumerate()
            .map(|(a, j)| {
                let s = shift.get(a).copied().unwrap_or(0);
                (j as i64 + s).rem_euclid(n) as usize
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Samples a real function of position on the grid.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.position(i))).collect()
    }

    /// Flat indices of cells within `cells` grid steps of the box boundary
    /// along any axis.
    pub fn boundary_layer(&self, cells: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.multi_index(i).into_iter().any(|j| j < cells || j >= self.n.saturating_sub(cells)))
            .collect()
    }
}

/// A complex field on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: SpatialGrid,
    values: Vec<Complex64>,
}

impl WaveField {
    pub fn new(grid: SpatialGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: values.len() });
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { t: 0.0, what: "wave field entry".into() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn from_real(grid: SpatialGrid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `⟨self, other⟩ = ∫ conj(self)·other`.
    pub fn inner(&self, other: &WaveField) -> Complex64 {
        let w = self.grid.cell_volume();
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<Complex64>() * w
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn scaled(mut self, c: Complex64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= c);
        self
    }

    /// Rescales to unit `L²` norm. Leaves a zero field untouched.
    pub fn normalized(self) -> Self {
        let norm = self.l2_norm();
        if norm > 0.0 {
            self.scaled(Complex64::new(1.0 / norm, 0.0))
        } else {
            self
        }
    }

    pub fn max_abs_diff(&self, other: &WaveField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &WaveField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        (self.grid.cell_volume() * s).sqrt()
    }

    /// `∫_W |ψ|²` over the cells accepted by `window`.
    pub fn windowed_mass(&self, window: impl Fn(&[f64]) -> bool) -> f64 {
        let w = self.grid.cell_volume();
        (0..self.values.len())
            .filter(|&i| window(&self.grid.position(i)))
            .map(|i| self.values[i].norm_sqr())
            .sum::<f64>()
            * w
    }

    /// Fraction of the mass sitting within four cells of the box boundary.
    pub fn wraparound_mass(&self) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let edge: f64 = self.grid.boundary_layer(4).into_iter().map(|i| self.values[i].norm_sqr()).sum();
        edge / total
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}
