//! Deterministic equations for path averages.
//!
//! The scalar solver evolves `u(x, y, t) = E{ψ(x, t) 1_{X_t = y}}`, which obeys
//!
//! ```text
//! i ∂_t u − Δu + i A u + V u = G,
//! ```
//!
//! and the Liouville solver evolves `f(x₁, x₂, y, t) = E{ψ(x₁)ψ̄(x₂) 1_{X_t = y}}`,
//!
//! ```text
//! i ∂_t f − Δ_{x₁} f + Δ_{x₂} f + i A f + (V(x₁, y) − V(x₂, y)) f = F.
//! ```
//!
//! Both are "joint" averages: dividing state `y` by `P(X_t = y)` gives the
//! conditional average. For a chain started in its stationary law the two
//! differ by a constant factor.
//!
//! The Liouville solver works in one space dimension only: `f` stores
//! `n² · m` complex numbers.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{laplacian_symbol, phase_multiplier, Fourier, SpatialGrid, WaveField};
use crate::markov::MarkovModel;
use crate::potential::PotentialFamily;
use crate::propagator::validate_schedule;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default cap on `n` for the Liouville solver.
pub const DEFAULT_LIOUVILLE_CAP: usize = 128;
/// Largest state count accepted by the Liouville solver.
pub const MAX_LIOUVILLE_STATES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedConfig {
    pub dt: f64,
    pub sample_times: Vec<f64>,
}

impl AveragedConfig {
    pub fn new(dt: f64, sample_times: Vec<f64>) -> Self {
        Self { dt, sample_times }
    }

    /// Samples every `every` steps from `0` to `horizon`.
    pub fn uniform(dt: f64, horizon: f64, every: usize) -> Result<Self> {
        if every == 0 {
            return Err(Error::InvalidArgument("sampling stride must be positive".into()));
        }
        let steps = (horizon / dt).round() as usize;
        Ok(Self::new(dt, (0..=steps).step_by(every).map(|k| k as f64 * dt).collect()))
    }

    fn plan(&self) -> Result<(usize, Vec<usize>)> {
        validate_schedule(self.dt, &self.sample_times)?;
        let at: Vec<usize> = self.sample_times.iter().map(|t| (t / self.dt).round() as usize).collect();
        Ok((*at.last().unwrap_or(&0), at))
    }
}

/// Forcing `G(x, y, t)` of the scalar equation.
pub trait ScalarSource: Send + Sync {
    fn evaluate(&self, t: f64, state: usize, grid: &SpatialGrid, out: &mut [Complex64]);
}

/// Forcing `F(x₁, x₂, y, t)` of the Liouville equation.
pub trait LiouvilleSource: Send + Sync {
    fn evaluate(&self, t: f64, state: usize, grid: &SpatialGrid, out: &mut DMatrix<Complex64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedField {
    pub t: f64,
    pub states: Vec<WaveField>,
}

impl AveragedField {
    /// `u(·, y, 0) = p₀(y) ψ₀` for the model's initial law.
    pub fn from_initial(psi0: &WaveField, model: &MarkovModel) -> Self {
        let p = model.initial_law().probabilities(model.states());
        Self { t: 0.0, states: p.iter().map(|&w| psi0.clone().scaled(Complex64::new(w, 0.0))).collect() }
    }

    /// `u(·, y, 0) = p₀(y) ψ₀(y)` for initial data depending on the start state.
    pub fn from_table(table: &[WaveField], model: &MarkovModel) -> Result<Self> {
        if table.len() != model.states() {
            return Err(Error::LengthMismatch { expected: model.states(), actual: table.len() });
        }
        let p = model.initial_law().probabilities(model.states());
        Ok(Self {
            t: 0.0,
            states: table.iter().zip(&p).map(|(f, &w)| f.clone().scaled(Complex64::new(w, 0.0))).collect(),
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        self.states[0].grid()
    }

    /// `‖u − v‖` in `L²(dx) ⊗ ℓ²(y)`.
    pub fn l2_distance(&self, other: &AveragedField) -> f64 {
        self.states.iter().zip(&other.states).map(|(a, b)| a.l2_distance(b).powi(2)).sum::<f64>().sqrt()
    }
}

fn check_inputs(grid: &SpatialGrid, states: usize, family: &PotentialFamily, model: &MarkovModel) -> Result<()> {
    if family.grid() != grid {
        return Err(Error::InvalidArgument("averaged data and potential live on different grids".into()));
    }
    if family.states() != model.states() || states != model.states() {
        return Err(Error::LengthMismatch { expected: model.states(), actual: states.min(family.states()) });
    }
    Ok(())
}

fn mix_scalar(states: &mut [WaveField], kernel: &DMatrix<f64>) {
    let m = states.len();
    if m == 1 {
        return;
    }
    let old: Vec<Vec<Complex64>> = states.iter().map(|s| s.values().to_vec()).collect();
    for (y, s) in states.iter_mut().enumerate() {
        let out = s.values_mut();
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for yp in 0..m {
            let c = kernel[(y, yp)];
            out.iter_mut().zip(&old[yp]).for_each(|(o, v)| *o += v * c);
        }
    }
}

fn potential_phase(data: &mut [Complex64], v: &[f64], s: f64) {
    data.iter_mut().zip(v).for_each(|(d, &a)| *d *= Complex64::from_polar(1.0, s * a));
}

/// Strang splitting `M(s/2) K(s/2) P(s) K(s/2) M(s/2)` for the scalar
/// averaged equation; `observer` sees the state at every sample time.
pub fn solve_scalar_averaged_with(
    g0: &AveragedField,
    family: &PotentialFamily,
    model: &MarkovModel,
    cfg: &AveragedConfig,
    source: Option<&dyn ScalarSource>,
    mut observer: impl FnMut(&AveragedField) -> Result<()>,
) -> Result<()> {
    let grid = *g0.grid();
    check_inputs(&grid, g0.states.len(), family, model)?;
    let (steps, at) = cfg.plan()?;
    let dt = cfg.dt;
    let mix = model.heat_kernel(0.5 * dt)?.matrix;
    let kinetic = phase_multiplier(&laplacian_symbol(&grid), 0.5 * dt);
    let mut fouriers: Vec<Fourier> = (0..model.states()).map(|_| Fourier::new(grid)).collect();
    let mut g = g0.clone();
    g.t = 0.0;
    let mut forcing = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut next = 0;
    while next < at.len() && at[next] == 0 {
        observer(&g)?;
        next += 1;
    }
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * dt;
        mix_scalar(&mut g.states, &mix);
        g.states
            .par_iter_mut()
            .zip(fouriers.par_iter_mut())
            .try_for_each(|(s, f)| f.apply_multiplier(s.values_mut(), &kinetic))?;
        for (y, s) in g.states.iter_mut().enumerate() {
            let v = family.state(y);
            match source {
                Some(src) => {
                    potential_phase(s.values_mut(), v, 0.5 * dt);
                    src.evaluate(mid, y, &grid, &mut forcing);
                    s.values_mut().iter_mut().zip(&forcing).for_each(|(a, b)| *a -= I * dt * b);
                    potential_phase(s.values_mut(), v, 0.5 * dt);
                }
                None => potential_phase(s.values_mut(), v, dt),
            }
        }
        g.states
            .par_iter_mut()
            .zip(fouriers.par_iter_mut())
            .try_for_each(|(s, f)| f.apply_multiplier(s.values_mut(), &kinetic))?;
        mix_scalar(&mut g.states, &mix);
        g.t = (k + 1) as f64 * dt;
        if g.states.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { t: g.t, what: "averaged field".into() });
        }
        if next < at.len() && at[next] == k + 1 {
            g.t = cfg.sample_times[next];
            observer(&g)?;
            next += 1;
        }
    }
    Ok(())
}

pub fn solve_scalar_averaged(
    g0: &AveragedField,
    family: &PotentialFamily,
    model: &MarkovModel,
    cfg: &AveragedConfig,
    source: Option<&dyn ScalarSource>,
) -> Result<Vec<AveragedField>> {
    let mut out = Vec::with_capacity(cfg.sample_times.len());
    solve_scalar_averaged_with(g0, family, model, cfg, source, |g| {
        out.push(g.clone());
        Ok(())
    })?;
    Ok(out)
}

/// `f(·, ·, y)` for each state, as `n × n` matrices indexed by grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDensityMatrix {
    pub t: f64,
    grid: SpatialGrid,
    pub states: Vec<DMatrix<Complex64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceReport {
    pub t: f64,
    pub total: f64,
    /// Largest `|Im|` of any diagonal entry; should be round-off.
    pub diagonal_imag: f64,
}

impl AveragedDensityMatrix {
    pub fn new(grid: SpatialGrid, states: Vec<DMatrix<Complex64>>, cap: usize) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "density matrices are only supported in one dimension, got d = {}",
                grid.dim()
            )));
        }
        if grid.n() > cap {
            return Err(Error::SizeCap(format!("n = {} exceeds the density-matrix cap {cap}", grid.n())));
        }
        if states.is_empty() || states.len() > MAX_LIOUVILLE_STATES {
            return Err(Error::SizeCap(format!(
                "density matrices need 1..={MAX_LIOUVILLE_STATES} states, got {}",
                states.len()
            )));
        }
        for s in &states {
            if s.nrows() != grid.n() || s.ncols() != grid.n() {
                return Err(Error::LengthMismatch { expected: grid.n(), actual: s.nrows().max(s.ncols()) });
            }
        }
        Ok(Self { t: 0.0, grid, states })
    }

    /// `f(·, ·, y, 0) = p₀(y) ψ₀ ⊗ ψ̄₀`.
    pub fn from_initial(psi0: &WaveField, model: &MarkovModel) -> Result<Self> {
        Self::from_weights(psi0, &model.initial_law().probabilities(model.states()))
    }

    /// `f(·, ·, y, 0) = weights[y] · ψ₀ ⊗ ψ̄₀`.
    pub fn from_weights(psi0: &WaveField, weights: &[f64]) -> Result<Self> {
        let outer = rank_one(psi0);
        let states = weights.iter().map(|&w| &outer * Complex64::new(w, 0.0)).collect();
        Self::new(*psi0.grid(), states, DEFAULT_LIOUVILLE_CAP.max(psi0.grid().n()))
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// `ρ(x, y) = f(x, x, y)`, real part of the diagonal.
    pub fn density(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|f| f.diagonal().iter().map(|c| c.re).collect()).collect()
    }

    /// `tr f(·, ·, y) = h Σ_x f(x, x, y)` for each state.
    pub fn state_traces(&self) -> Vec<f64> {
        let h = self.grid.cell_volume();
        self.states.iter().map(|f| h * f.diagonal().iter().map(|c| c.re).sum::<f64>()).collect()
    }

    pub fn trace(&self) -> TraceReport {
        let diagonal_imag = self
            .states
            .iter()
            .flat_map(|f| f.diagonal().iter().map(|c| c.im.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        TraceReport { t: self.t, total: self.state_traces().iter().sum(), diagonal_imag }
    }

    /// `max ‖f − f†‖_∞ / max ‖f‖_∞` over states.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for f in &self.states {
            let n = f.nrows();
            for j in 0..n {
                for i in 0..n {
                    defect = defect.max((f[(i, j)] - f[(j, i)].conj()).norm());
                    scale = scale.max(f[(i, j)].norm());
                }
            }
        }
        if scale > 0.0 {
            defect / scale
        } else {
            defect
        }
    }

    /// Smallest eigenvalue of the operator `h·f(·, ·, y)` for each state.
    pub fn psd_check(&self) -> Vec<f64> {
        let h = self.grid.cell_volume();
        self.states
            .iter()
            .map(|f| {
                let herm = (f + f.adjoint()) * Complex64::new(0.5 * h, 0.0);
                SymmetricEigen::new(herm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &AveragedDensityMatrix) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// `ψ ⊗ ψ̄` as an `n × n` matrix.
pub fn rank_one(psi: &WaveField) -> DMatrix<Complex64> {
    let v = psi.values();
    DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
}

/// `f ← K f K†` with `K` the Fourier multiplier `mult`, column by column.
fn conjugate_by(f: &mut DMatrix<Complex64>, fourier: &mut Fourier, mult: &[Complex64]) -> Result<()> {
    let n = f.nrows();
    for col in f.as_mut_slice().chunks_mut(n) {
        fourier.apply_multiplier(col, mult)?;
    }
    f.adjoint_mut();
    for col in f.as_mut_slice().chunks_mut(n) {
        fourier.apply_multiplier(col, mult)?;
    }
    f.adjoint_mut();
    Ok(())
}

fn commutator_phase(f: &mut DMatrix<Complex64>, v: &[f64], s: f64) {
    let n = f.nrows();
    for j in 0..n {
        for i in 0..n {
            f[(i, j)] *= Complex64::from_polar(1.0, s * (v[i] - v[j]));
        }
    }
}

fn mix_matrices(states: &mut [DMatrix<Complex64>], kernel: &DMatrix<f64>) {
    let m = states.len();
    if m == 1 {
        return;
    }
    let old = states.to_vec();
    for (y, s) in states.iter_mut().enumerate() {
        s.fill(Complex64::new(0.0, 0.0));
        for (yp, o) in old.iter().enumerate() {
            s.zip_apply(o, |a, b| *a += b * kernel[(y, yp)]);
        }
    }
}

/// Splitting `M(s/2) K(s/2) P(s) K(s/2) M(s/2)` for the Liouville equation,
/// where `K` conjugates by the free flow, `P` multiplies by the commutator
/// phase and `M` mixes states with `e^{−sA/2}`.
pub fn solve_liouville_averaged_with(
    f0: &AveragedDensityMatrix,
    family: &PotentialFamily,
    model: &MarkovModel,
    cfg: &AveragedConfig,
    source: Option<&dyn LiouvilleSource>,
    mut observer: impl FnMut(&AveragedDensityMatrix) -> Result<()>,
) -> Result<()> {
    let grid = *f0.grid();
    check_inputs(&grid, f0.states.len(), family, model)?;
    let (steps, at) = cfg.plan()?;
    let dt = cfg.dt;
    let mix = model.heat_kernel(0.5 * dt)?.matrix;
    let kinetic = phase_multiplier(&laplacian_symbol(&grid), 0.5 * dt);
    let mut fouriers: Vec<Fourier> = (0..model.states()).map(|_| Fourier::new(grid)).collect();
    let mut f = f0.clone();
    f.t = 0.0;
    let n = grid.n();
    let mut forcing = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut next = 0;
    while next < at.len() && at[next] == 0 {
        observer(&f)?;
        next += 1;
    }
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * dt;
        mix_matrices(&mut f.states, &mix);
        f.states.par_iter_mut().zip(fouriers.par_iter_mut()).try_for_each(|(s, fo)| conjugate_by(s, fo, &kinetic))?;
        for (y, s) in f.states.iter_mut().enumerate() {
            let v = family.state(y);
            match source {
                Some(src) => {
                    commutator_phase(s, v, 0.5 * dt);
                    src.evaluate(mid, y, &grid, &mut forcing);
                    s.zip_apply(&forcing, |a, b| *a -= I * dt * b);
                    commutator_phase(s, v, 0.5 * dt);
                }
                None => commutator_phase(s, v, dt),
            }
        }
        f.states.par_iter_mut().zip(fouriers.par_iter_mut()).try_for_each(|(s, fo)| conjugate_by(s, fo, &kinetic))?;
        mix_matrices(&mut f.states, &mix);
        f.t = (k + 1) as f64 * dt;
        if f.states.iter().any(|s| s.iter().any(|c| !(c.re.is_finite() && c.im.is_finite()))) {
            return Err(Error::NonFinite { t: f.t, what: "averaged density matrix".into() });
        }
        if next < at.len() && at[next] == k + 1 {
            f.t = cfg.sample_times[next];
            observer(&f)?;
            next += 1;
        }
    }
    Ok(())
}

pub fn solve_liouville_averaged(
    f0: &AveragedDensityMatrix,
    family: &PotentialFamily,
    model: &MarkovModel,
    cfg: &AveragedConfig,
    source: Option<&dyn LiouvilleSource>,
) -> Result<Vec<AveragedDensityMatrix>> {
    let mut out = Vec::with_capacity(cfg.sample_times.len());
    solve_liouville_averaged_with(f0, family, model, cfg, source, |f| {
        out.push(f.clone());
        Ok(())
    })?;
    Ok(out)
}
