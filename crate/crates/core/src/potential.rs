//! Potential families `V(x, y)` indexed by Markov state, their time-dependent
//! realization along a path, and the kernel of the Hartree nonlinearity.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::grid::{lorentz_norm_weighted, Fourier, SpatialGrid};
use crate::markov::{MarkovModel, PathSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shape {
    Gaussian,
    SquareWell,
    /// `sech²` (Pöschl–Teller) profile.
    Sech2,
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Shape::Gaussian),
            "square" | "square_well" => Ok(Shape::SquareWell),
            "sech2" | "poschl_teller" => Ok(Shape::Sech2),
            other => Err(Error::InvalidArgument(format!(
                "unknown potential shape {other:?} (expected gaussian, square, sech2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeParams {
    pub shape: Shape,
    pub amplitude: f64,
    pub width: f64,
    pub center: Vec<f64>,
}

impl ShapeParams {
    pub fn new(shape: Shape, amplitude: f64, width: f64) -> Self {
        Self { shape, amplitude, width, center: Vec::new() }
    }

    /// Samples `amplitude · profile(|x − center| / width)` on the grid.
    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.sample(|x| {
            let r2: f64 =
                x.iter().enumerate().map(|(a, &xa)| (xa - self.center.get(a).copied().unwrap_or(0.0)).powi(2)).sum();
            let r = r2.sqrt() / self.width;
            let profile = match self.shape {
                Shape::Gaussian => (-0.5 * r * r).exp(),
                Shape::SquareWell => {
                    if r <= 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Shape::Sech2 => r.cosh().powi(-2),
            };
            self.amplitude * profile
        })
    }
}

/// One real potential per Markov state.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFamily {
    grid: SpatialGrid,
    states: Vec<Vec<f64>>,
}

impl PotentialFamily {
    pub fn new(grid: SpatialGrid, states: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("potential family needs at least one state".into()));
        }
        for s in &states {
            if s.len() != grid.len() {
                return Err(Error::LengthMismatch { expected: grid.len(), actual: s.len() });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: 0.0, what: "potential sample".into() });
            }
        }
        Ok(Self { grid, states })
    }

    /// `V(x, y) = base(x)` for all `m` states.
    pub fn uniform(grid: SpatialGrid, base: &[f64], m: usize) -> Result<Self> {
        Self::new(grid, vec![base.to_vec(); m])
    }

    pub fn zero(grid: SpatialGrid, m: usize) -> Self {
        Self { grid, states: vec![vec![0.0; grid.len()]; m] }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, y: usize) -> &[f64] {
        &self.states[y]
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// `V_ω(·, t) = V(·, ω(t))`.
    pub fn realize(&self, path: &PathSample, t: f64) -> Result<&[f64]> {
        let y = path.state_at(t)?;
        self.states
            .get(y)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("path state {y} outside the family")))
    }

    pub fn max_abs(&self) -> f64 {
        self.states.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup_y ‖V(·, y)‖_{L¹}` and `sup_y ‖V(·, y)‖_{L^∞}`.
    pub fn l1_linf(&self) -> (f64, f64) {
        let w = self.grid.cell_volume();
        let l1 = self.states.iter().map(|s| s.iter().map(|v| v.abs()).sum::<f64>() * w).fold(0.0, f64::max);
        (l1, self.max_abs())
    }

    /// Adds a state-independent field to every state.
    pub fn with_offset(&self, offset: &[f64]) -> Result<Self> {
        let states = self.states.iter().map(|s| s.iter().zip(offset).map(|(a, b)| a + b).collect()).collect();
        Self::new(self.grid, states)
    }
}

/// State `y` holds `base` circularly shifted by `shifts[y]` lattice cells.
pub fn make_translate_family(grid: SpatialGrid, base: &[f64], shifts: &[Vec<i64>]) -> Result<PotentialFamily> {
    if base.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), actual: base.len() });
    }
    let states = shifts
        .iter()
        .map(|s| {
            let mut out = vec![0.0; grid.len()];
            for (i, &v) in base.iter().enumerate() {
                out[grid.shift(i, s)] = v;
            }
            out
        })
        .collect();
    PotentialFamily::new(grid, states)
}

/// State `y` holds `V1 + amplitudes[y]·V2`.
pub fn make_amplitude_family(grid: SpatialGrid, v1: &[f64], v2: &[f64], amplitudes: &[f64]) -> Result<PotentialFamily> {
    for v in [v1, v2] {
        if v.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: v.len() });
        }
    }
    let states = amplitudes.iter().map(|&a| v1.iter().zip(v2).map(|(p, q)| p + a * q).collect()).collect();
    PotentialFamily::new(grid, states)
}

/// `V(x, y) = base(x) + offsets[y]`: randomness that only changes the phase.
pub fn make_gauge_family(grid: SpatialGrid, base: &[f64], offsets: &[f64]) -> Result<PotentialFamily> {
    let states = offsets.iter().map(|&c| base.iter().map(|v| v + c).collect()).collect();
    PotentialFamily::new(grid, states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Nontriviality {
    /// `V` does not depend on the state: the equation is deterministic.
    TrivialCase1,
    /// `V(x, y) = V(x) + f(y)`: only the phase is random.
    TrivialCase2,
    Nontrivial,
}

#[derive(Debug, Clone, Serialize)]
pub struct NontrivialityReport {
    pub class: Nontriviality,
    /// Cells where `max_y V − min_y V > tol`.
    pub condition1_cells: Vec<usize>,
    /// A cell `x₁` whose two-point differences vary with `y` for a large
    /// enough fraction of cells `x₂`.
    pub condition2_witness: Option<usize>,
    /// Largest fraction of `x₂` cells found for any `x₁`.
    pub condition2_fraction: f64,
}

/// Default tolerance `1e−8·‖V‖_∞` (or `1e−8` when `V ≡ 0`).
pub fn default_tolerance(family: &PotentialFamily) -> f64 {
    let m = family.max_abs();
    if m > 0.0 {
        1e-8 * m
    } else {
        1e-8
    }
}

/// Default fraction of `x₂` cells required by the two-point condition.
pub const DEFAULT_CONDITION2_FRACTION: f64 = 0.01;

/// Grid proxy for the nontrivial-randomness assumption.
///
/// Condition 1 asks for at least one cell where `V(x, ·)` is non-constant on
/// `supp h`. Condition 2 asks for a cell `x₁` such that, for at least
/// `min_fraction` of all cells `x₂`, the difference `V(x₁, y) − V(x₂, y)` is
/// non-constant in `y ∈ supp h`.
pub fn check_nontriviality(
    family: &PotentialFamily,
    ground: &[f64],
    tol: f64,
    min_fraction: f64,
) -> Result<NontrivialityReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if ground.len() != family.states() {
        return Err(Error::LengthMismatch { expected: family.states(), actual: ground.len() });
    }
    let support: Vec<usize> = (0..ground.len()).filter(|&y| ground[y] > 0.0).collect();
    let n = family.grid().len();
    let value = |x: usize, y: usize| family.states[y][x];

    let condition1_cells: Vec<usize> = (0..n)
        .filter(|&x| {
            let (lo, hi) = support
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(value(x, y)), hi.max(value(x, y))));
            hi - lo > tol
        })
        .collect();
    if condition1_cells.is_empty() {
        return Ok(NontrivialityReport {
            class: Nontriviality::TrivialCase1,
            condition1_cells,
            condition2_witness: None,
            condition2_fraction: 0.0,
        });
    }

    let needed = ((min_fraction * n as f64).ceil() as usize).max(1);
    let mut best_fraction = 0.0f64;
    let mut witness = None;
    for x1 in 0..n {
        let mut count = 0usize;
        for x2 in 0..n {
            let (lo, hi) = support.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                let e = value(x1, y) - value(x2, y);
                (lo.min(e), hi.max(e))
            });
            if hi - lo > tol {
                count += 1;
                if count >= needed && witness.is_none() {
                    witness = Some(x1);
                }
            }
        }
        best_fraction = best_fraction.max(count as f64 / n as f64);
        if witness.is_some() {
            break;
        }
    }
    let class = if witness.is_some() { Nontriviality::Nontrivial } else { Nontriviality::TrivialCase2 };
    Ok(NontrivialityReport { class, condition1_cells, condition2_witness: witness, condition2_fraction: best_fraction })
}

/// `(A[hV])(x, y) = Σ_{y'} A(y, y') h(y') V(x, y')`.
pub fn generator_weighted_potential(family: &PotentialFamily, model: &MarkovModel) -> Result<Vec<Vec<f64>>> {
    let m = model.states();
    if family.states() != m {
        return Err(Error::LengthMismatch { expected: m, actual: family.states() });
    }
    let a = model.generator();
    let h: &DVector<f64> = model.ground_state();
    let n = family.grid().len();
    Ok((0..m)
        .map(|y| {
            let mut out = vec![0.0; n];
            for yp in 0..m {
                let c = a[(y, yp)] * h[yp];
                if c != 0.0 {
                    out.iter_mut().zip(&family.states[yp]).for_each(|(o, v)| *o += c * v);
                }
            }
            out
        })
        .collect())
}

/// `‖A[hV]‖_{L^∞_y L^{d/2,∞}_x}`.
pub fn generator_weighted_potential_norm(family: &PotentialFamily, model: &MarkovModel) -> Result<f64> {
    let grid = family.grid();
    let p = grid.dim() as f64 / 2.0;
    let mut sup = 0.0f64;
    for field in generator_weighted_potential(family, model)? {
        sup = sup.max(lorentz_norm_weighted(&field, grid.cell_volume(), p, f64::INFINITY)?);
    }
    Ok(sup)
}

/// `V = v₁·v₂` with `v₁ = |V|^{1/2}` and `v₂ = |V|^{1/2} sgn V` (`sgn 0 = 0`).
#[derive(Debug, Clone)]
pub struct SplitWeights {
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
}

pub fn split(family: &PotentialFamily) -> SplitWeights {
    let v1 = family.states.iter().map(|s| s.iter().map(|v| v.abs().sqrt()).collect()).collect();
    let v2 = family
        .states
        .iter()
        .map(|s| s.iter().map(|&v| if v == 0.0 { 0.0 } else { v.abs().sqrt() * v.signum() }).collect())
        .collect();
    SplitWeights { v1, v2 }
}

/// The convolution kernel `χ` and coupling `ε` of the Hartree term.
///
/// `χ` is stored as a field sampled at grid positions (origin at index `n/2`
/// on each axis) and must be even under `x → −x`.
#[derive(Debug, Clone)]
pub struct HartreeKernel {
    grid: SpatialGrid,
    chi: Vec<f64>,
    epsilon: f64,
    /// Fourier multiplier of `ρ ↦ χ ∗ ρ` for the unitary transform.
    multiplier: Vec<Complex64>,
}

impl HartreeKernel {
    pub fn new(grid: SpatialGrid, chi: Vec<f64>, epsilon: f64) -> Result<Self> {
        if chi.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: chi.len() });
        }
        if !epsilon.is_finite() || chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: 0.0, what: "Hartree kernel".into() });
        }
        let scale = chi.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let defect = (0..grid.len()).map(|i| (chi[i] - chi[grid.reflect(i)]).abs()).fold(0.0, f64::max);
        if defect > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotEven(defect));
        }
        // Re-centre χ on index 0 so circular convolution sees displacements.
        let half = vec![(grid.n() / 2) as i64; grid.dim()];
        let mut centred: Vec<Complex64> =
            (0..grid.len()).map(|i| Complex64::new(chi[grid.shift(i, &half)], 0.0)).collect();
        Fourier::new(grid).forward_in_place(&mut centred)?;
        let factor = grid.cell_volume() * (grid.len() as f64).sqrt();
        let multiplier = centred.into_iter().map(|c| c * factor).collect();
        Ok(Self { grid, chi, epsilon, multiplier })
    }

    /// `ε = 0`: no nonlinearity.
    pub fn none(grid: SpatialGrid) -> Self {
        Self { grid, chi: vec![0.0; grid.len()], epsilon: 0.0, multiplier: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    /// Normalized Gaussian `χ(x) = (2πσ²)^{−d/2} e^{−|x|²/(2σ²)}`.
    pub fn gaussian(grid: SpatialGrid, width: f64, epsilon: f64) -> Result<Self> {
        let d = grid.dim() as i32;
        let norm = (2.0 * std::f64::consts::PI * width * width).powf(-0.5 * d as f64);
        let chi = grid.sample(|x| norm * (-0.5 * x.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp());
        Self::new(grid, chi, epsilon)
    }

    /// Grid delta `1/h^d` at the origin, so `χ ∗ ρ = ρ`.
    pub fn delta(grid: SpatialGrid, epsilon: f64) -> Result<Self> {
        let mut chi = vec![0.0; grid.len()];
        chi[grid.flat_index(&vec![grid.n() / 2; grid.dim()])] = 1.0 / grid.cell_volume();
        Self::new(grid, chi, epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn multiplier(&self) -> &[Complex64] {
        &self.multiplier
    }

    pub fn is_active(&self) -> bool {
        self.epsilon != 0.0
    }
}
