//! Energies, identity residuals, decay fits and space-time norms.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::averaged::AveragedDensityMatrix;
use crate::ensemble::MeanEstimate;
use crate::grid::{laplacian_symbol, lorentz_norm, Fourier, WaveField};
use crate::markov::MarkovModel;
use crate::potential::{HartreeKernel, PotentialFamily};
use crate::propagator::hartree_potential_with;
use crate::spectral::laplacian_matrix;
use crate::{Error, Result};

/// Floor added to denominators of relative residuals.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// `½‖∇ψ‖² + ½∫V|ψ|² + (ε/4)∬χ(x−y)|ψ(x)|²|ψ(y)|²`, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub hartree: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(t: f64, kinetic: f64, potential: f64, hartree: f64) -> Self {
        Self { t, kinetic, potential, hartree, total: kinetic + potential + hartree }
    }
}

pub fn energy_breakdown(psi: &WaveField, potential: &[f64], kernel: &HartreeKernel, t: f64) -> Result<EnergyBreakdown> {
    let grid = *psi.grid();
    energy_breakdown_with(&mut Fourier::new(grid), &laplacian_symbol(&grid), psi, potential, kernel, t)
}

/// As [`energy_breakdown`], reusing a transform and the `|k|²` symbol.
pub fn energy_breakdown_with(
    fourier: &mut Fourier,
    symbol: &[f64],
    psi: &WaveField,
    potential: &[f64],
    kernel: &HartreeKernel,
    t: f64,
) -> Result<EnergyBreakdown> {
    let grid = psi.grid();
    if potential.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), actual: potential.len() });
    }
    let w = grid.cell_volume();
    let spectrum = fourier.transform(psi)?;
    let kinetic = 0.5 * w * spectrum.iter().zip(symbol).map(|(c, k2)| k2 * c.norm_sqr()).sum::<f64>();
    let density = psi.density();
    let pot = 0.5 * w * density.iter().zip(potential).map(|(r, v)| r * v).sum::<f64>();
    let hartree = if kernel.is_active() {
        let (field, _) = hartree_potential_with(fourier, psi.values(), kernel)?;
        0.25 * w * density.iter().zip(&field).map(|(r, v)| r * v).sum::<f64>()
    } else {
        0.0
    };
    Ok(EnergyBreakdown::new(t, kinetic, pot, hartree))
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two sample times".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-9 * dt.abs().max(times[times.len() - 1].abs());
    for (k, w) in times.windows(2).enumerate() {
        if !(dt > 0.0) || ((w[1] - w[0]) - dt).abs() > tol {
            return Err(Error::InvalidArgument(format!("sample times are not uniform near index {k}")));
        }
    }
    Ok(dt)
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::InvalidArgument(format!("sample times {x} and {y} do not match")));
        }
    }
    Ok(())
}

/// `tr(K f) = h Σ_{ij} K_ij f_ji` for a real kernel `K` and grid volume `h`.
fn trace_product(k: &DMatrix<f64>, f: &DMatrix<Complex64>, cell: f64) -> f64 {
    let n = f.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += k[(i, j)] * f[(j, i)].re;
        }
    }
    cell * s
}

fn trace_diag(v: &[f64], f: &DMatrix<Complex64>, cell: f64) -> f64 {
    cell * v.iter().enumerate().map(|(i, v)| v * f[(i, i)].re).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyIdentityPoint {
    pub t: f64,
    /// Centred difference of `Σ_y h(y) tr[(−Δ + V_y) f_y]`.
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Weighted Liouville energy `Σ_y h(y) tr[(−Δ + V_y) f_y]`.
pub fn weighted_liouville_energy(
    f: &AveragedDensityMatrix,
    family: &PotentialFamily,
    model: &MarkovModel,
) -> Result<f64> {
    let lap = laplacian_matrix(f.grid())?;
    Ok(weighted_energy_with(&lap, f, family, model.ground_state().as_slice()))
}

fn weighted_energy_with(lap: &DMatrix<f64>, f: &AveragedDensityMatrix, family: &PotentialFamily, h: &[f64]) -> f64 {
    let cell = f.grid().cell_volume();
    f.states
        .iter()
        .enumerate()
        .map(|(y, fy)| h[y] * (trace_product(lap, fy, cell) + trace_diag(family.state(y), fy, cell)))
        .sum()
}

/// Checks the energy balance of the averaged Liouville equation
///
/// ```text
/// d/dt Σ_y h(y) tr[(−Δ + V_y) f_y] = −Σ_y (Aᵀh)(y) tr(−Δ f_y) − Σ_y tr(Aᵀ[hV](y) f_y)
/// ```
///
/// with `h` the ground state of `A` and `Aᵀ[hV](y) = Σ_{y'} A(y', y) h(y') V_{y'}`.
/// For symmetric `A` the first term vanishes. The left side is a centred
/// difference, so the first and last samples are skipped.
pub fn energy_derivative_identity(
    series: &[AveragedDensityMatrix],
    family: &PotentialFamily,
    model: &MarkovModel,
) -> Result<Vec<EnergyIdentityPoint>> {
    let times: Vec<f64> = series.iter().map(|f| f.t).collect();
    let dt = check_uniform(&times)?;
    let m = model.states();
    if family.states() != m || series.iter().any(|f| f.states.len() != m) {
        return Err(Error::LengthMismatch { expected: m, actual: family.states() });
    }
    let grid = *series[0].grid();
    let cell = grid.cell_volume();
    let lap = laplacian_matrix(&grid)?;
    let a = model.generator();
    let h = model.ground_state().as_slice().to_vec();
    let kinetic_weight: Vec<f64> = (0..m).map(|y| (0..m).map(|yp| a[(yp, y)] * h[yp]).sum()).collect();
    let potential_weight: Vec<Vec<f64>> = (0..m)
        .map(|y| {
            let mut out = vec![0.0; grid.len()];
            for yp in 0..m {
                let c = a[(yp, y)] * h[yp];
                out.iter_mut().zip(family.state(yp)).for_each(|(o, v)| *o += c * v);
            }
            out
        })
        .collect();
    let energy: Vec<f64> = series.iter().map(|f| weighted_energy_with(&lap, f, family, &h)).collect();
    Ok((1..series.len() - 1)
        .map(|k| {
            let f = &series[k];
            let lhs = (energy[k + 1] - energy[k - 1]) / (2.0 * dt);
            let rhs = -(0..m)
                .map(|y| {
                    kinetic_weight[y] * trace_product(&lap, &f.states[y], cell)
                        + trace_diag(&potential_weight[y], &f.states[y], cell)
                })
                .sum::<f64>();
            EnergyIdentityPoint { t: f.t, lhs, rhs, residual: (lhs - rhs).abs() }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeynmanKacPoint {
    pub t: f64,
    /// Monte Carlo `E ∫|V_ω||ψ_ω|²`.
    pub lhs: f64,
    pub std_error: f64,
    /// `Σ_y ∫ |V_y(x)| f(x, x, y) dx` from the averaged density matrix.
    pub rhs: f64,
    /// `|lhs − rhs| / (|rhs| + floor)`.
    pub relative: f64,
    /// `|lhs − rhs|` in standard errors (infinite if the error is zero and
    /// the sides differ).
    pub z: f64,
    /// Same comparison for the time integrals over `[t₀, t]` (trapezoid).
    pub integrated_lhs: f64,
    pub integrated_rhs: f64,
    pub integrated_relative: f64,
}

pub fn feynman_kac_rhs(f: &AveragedDensityMatrix, family: &PotentialFamily) -> Result<f64> {
    if family.states() != f.states.len() {
        return Err(Error::LengthMismatch { expected: f.states.len(), actual: family.states() });
    }
    let cell = f.grid().cell_volume();
    Ok(f.states
        .iter()
        .enumerate()
        .map(|(y, fy)| {
            let abs: Vec<f64> = family.state(y).iter().map(|v| v.abs()).collect();
            trace_diag(&abs, fy, cell)
        })
        .sum())
}

pub fn feynman_kac_residual(
    lhs: &[MeanEstimate],
    series: &[AveragedDensityMatrix],
    family: &PotentialFamily,
    floor: f64,
) -> Result<Vec<FeynmanKacPoint>> {
    let a: Vec<f64> = lhs.iter().map(|e| e.t).collect();
    let b: Vec<f64> = series.iter().map(|f| f.t).collect();
    check_aligned(&a, &b)?;
    let rel = |l: f64, r: f64| (l - r).abs() / (r.abs() + floor);
    let mut out: Vec<FeynmanKacPoint> = Vec::with_capacity(lhs.len());
    for (e, f) in lhs.iter().zip(series) {
        let rhs = feynman_kac_rhs(f, family)?;
        let diff = (e.mean - rhs).abs();
        let z = if e.std_error > 0.0 {
            diff / e.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let (il, ir) = match out.last() {
            Some(p) => {
                let w = 0.5 * (e.t - p.t);
                (p.integrated_lhs + w * (p.lhs + e.mean), p.integrated_rhs + w * (p.rhs + rhs))
            }
            None => (0.0, 0.0),
        };
        out.push(FeynmanKacPoint {
            t: e.t,
            lhs: e.mean,
            std_error: e.std_error,
            rhs,
            relative: rel(e.mean, rhs),
            z,
            integrated_lhs: il,
            integrated_rhs: ir,
            integrated_relative: rel(il, ir),
        });
    }
    Ok(out)
}

/// Least-squares power law `value ≈ e^{intercept} t^{slope}` over a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub series: Vec<(f64, f64)>,
    pub window: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
    /// 95% Student-t half-width for the slope (infinite with two points).
    pub confidence: f64,
}

pub fn decay_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let (t0, t1) = window;
    if !(t0 > 0.0 && t1 > t0) {
        return Err(Error::InvalidArgument(format!("fit window ({t0}, {t1}) must satisfy 0 < t0 < t1")));
    }
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= t0 && t <= t1).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!("fit window ({t0}, {t1}) holds {} samples", pts.len())));
    }
    if let Some(&(t, v)) = pts.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("cannot fit a power law to value {v} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let confidence = if pts.len() > 2 {
        let dof = k - 2.0;
        let q = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidArgument(e.to_string()))?.inverse_cdf(0.975);
        q * (sse / dof / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    if !slope.is_finite() {
        return Err(Error::NonFinite { t: t0, what: "decay slope".into() });
    }
    Ok(DecayFit { series: pts, window, slope, intercept, residual: (sse / k).sqrt(), confidence })
}

/// `(Σ_t dt · g(t)^{p_t})^{1/p_t}` for samples `g(t)` on a uniform grid
/// (left endpoints), `max g` for `p_t = ∞`.
pub fn time_norm(values: &[f64], dt: f64, p_t: f64) -> Result<f64> {
    if p_t.is_nan() || p_t < 1.0 {
        return Err(Error::InvalidExponent(format!("time exponent must be >= 1, got {p_t}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be > 0, got {dt}")));
    }
    if p_t.is_infinite() {
        return Ok(values.iter().copied().fold(0.0, f64::max));
    }
    Ok((dt * values.iter().map(|v| v.powf(p_t)).sum::<f64>()).powf(1.0 / p_t))
}

/// Discrete `L^{p_t}_t L^{p_x, q_x}_x` norm of a uniformly sampled series.
pub fn strichartz_norm(series: &[WaveField], dt: f64, p_t: f64, p_x: f64, q_x: f64) -> Result<f64> {
    let spatial = series.iter().map(|psi| lorentz_norm(psi, p_x, q_x)).collect::<Result<Vec<f64>>>()?;
    time_norm(&spatial, dt, p_t)
}

/// Space-time norms of an ensemble in both orders of the `ω` and `t`
/// integrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSpaceTimeNorm {
    /// `(E ‖ψ_ω‖_{L^{p_t}_t X}^{p_ω})^{1/p_ω}`.
    pub omega_outside: f64,
    /// `‖(E ‖ψ_ω(t)‖_X^{p_ω})^{1/p_ω}‖_{L^{p_t}_t}`.
    pub omega_inside: f64,
}

/// `spatial[path][sample]` holds per-path spatial norms on a uniform grid.
pub fn ensemble_space_time_norm(
    spatial: &[Vec<f64>],
    dt: f64,
    p_t: f64,
    p_omega: f64,
) -> Result<EnsembleSpaceTimeNorm> {
    if spatial.is_empty() {
        return Err(Error::InvalidArgument("no paths".into()));
    }
    if p_omega.is_nan() || p_omega < 1.0 || p_omega.is_infinite() {
        return Err(Error::InvalidExponent(format!("ensemble exponent must be finite and >= 1, got {p_omega}")));
    }
    let len = spatial[0].len();
    if let Some(bad) = spatial.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch { expected: len, actual: bad.len() });
    }
    let k = spatial.len() as f64;
    let per_path = spatial.iter().map(|s| time_norm(s, dt, p_t)).collect::<Result<Vec<f64>>>()?;
    let omega_outside = (per_path.iter().map(|v| v.powf(p_omega)).sum::<f64>() / k).powf(1.0 / p_omega);
    let inner: Vec<f64> =
        (0..len).map(|i| (spatial.iter().map(|s| s[i].powf(p_omega)).sum::<f64>() / k).powf(1.0 / p_omega)).collect();
    Ok(EnsembleSpaceTimeNorm { omega_outside, omega_inside: time_norm(&inner, dt, p_t)? })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::averaged::{solve_liouville_averaged, AveragedConfig};
    use crate::grid::{sum_norm, SpatialGrid};
    use crate::markov::sample_path;
    use crate::potential::{make_amplitude_family, make_gauge_family, Shape, ShapeParams};
    use crate::propagator::{evolve_path, SolverConfig, SplitOrder};

    fn gaussian(grid: SpatialGrid, sigma: f64, center: f64, k: f64) -> WaveField {
        WaveField::from_fn(grid, |x| {
            Complex64::from_polar((-(x[0] - center).powi(2) / (2.0 * sigma * sigma)).exp(), k * x[0])
        })
    }

    #[test]
    fn plane_wave_kinetic_energy() {
        let grid = SpatialGrid::new(1, 64, 2.0 * PI).unwrap();
        let psi = WaveField::from_fn(grid, |x| Complex64::from_polar(1.0, 3.0 * x[0]));
        let e = energy_breakdown(&psi, &vec![0.0; 64], &HartreeKernel::none(grid), 0.0).unwrap();
        assert!((e.kinetic - 0.5 * 9.0 * psi.l2_norm().powi(2)).abs() <= 1e-10);
        assert_eq!(e.hartree, 0.0);
    }

    #[test]
    fn gaussian_dirichlet_integral() {
        let grid = SpatialGrid::new(1, 256, 40.0).unwrap();
        let sigma = 1.3;
        let psi = gaussian(grid, sigma, 0.0, 0.0);
        let e = energy_breakdown(&psi, &vec![0.0; 256], &HartreeKernel::none(grid), 0.0).unwrap();
        // ∫ |ψ'|² = √π / (2σ) for ψ = e^{−x²/2σ²}.
        assert!((e.kinetic - PI.sqrt() / (4.0 * sigma)).abs() <= 1e-8);
    }

    #[test]
    fn energy_parts_add_up_and_translate() {
        let grid = SpatialGrid::new(1, 128, 20.0).unwrap();
        let kernel = HartreeKernel::gaussian(grid, 0.7, 0.3).unwrap();
        let v = ShapeParams::new(Shape::Gaussian, -1.5, 1.0).sample(&grid);
        let psi = gaussian(grid, 1.0, 0.5, 1.2);
        let e = energy_breakdown(&psi, &v, &kernel, 0.0).unwrap();
        assert!((e.total - (e.kinetic + e.potential + e.hartree)).abs() <= 1e-12 * e.total.abs().max(1.0));
        assert!(e.hartree > 0.0);
        for s in [5i64, -17, 64] {
            let shift = |f: usize| grid.shift(f, &[s]);
            let mut sv = vec![0.0; 128];
            let mut sp = vec![Complex64::new(0.0, 0.0); 128];
            for i in 0..128 {
                sv[shift(i)] = v[i];
                sp[shift(i)] = psi.values()[i];
            }
            let shifted = energy_breakdown(&WaveField::new(grid, sp).unwrap(), &sv, &kernel, 0.0).unwrap();
            assert!((shifted.total - e.total).abs() <= 1e-12 * e.total.abs().max(1.0));
        }
    }

    fn liouville_series(
        family: &PotentialFamily,
        model: &MarkovModel,
        dt: f64,
        steps: usize,
    ) -> Vec<AveragedDensityMatrix> {
        let grid = *family.grid();
        let psi = gaussian(grid, 1.0, -1.0, 1.0).normalized();
        let f0 = AveragedDensityMatrix::from_initial(&psi, model).unwrap();
        let cfg = AveragedConfig::uniform(dt, dt * steps as f64, 1).unwrap();
        solve_liouville_averaged(&f0, family, model, &cfg, None).unwrap()
    }

    #[test]
    fn energy_identity_without_randomness_in_v() {
        let grid = SpatialGrid::new(1, 32, 16.0).unwrap();
        let v = ShapeParams::new(Shape::Gaussian, -2.0, 1.0).sample(&grid);
        let model = MarkovModel::two_state(1.0).unwrap();
        let family = PotentialFamily::uniform(grid, &v, 2).unwrap();
        // The splitting conserves a perturbed energy, so the drift is O(dt²).
        let series = liouville_series(&family, &model, 5e-5, 40);
        for p in energy_derivative_identity(&series, &family, &model).unwrap() {
            assert!(p.rhs.abs() <= 1e-12, "{p:?}");
            assert!(p.lhs.abs() <= 1e-8, "{p:?}");
        }

        let single = PotentialFamily::uniform(grid, &v, 1).unwrap();
        let trivial = MarkovModel::trivial();
        for p in energy_derivative_identity(&liouville_series(&single, &trivial, 5e-5, 40), &single, &trivial).unwrap()
        {
            assert!(p.lhs.abs() <= 1e-8 && p.rhs.abs() <= 1e-8, "{p:?}");
        }
    }

    #[test]
    fn energy_identity_for_a_random_family() {
        let grid = SpatialGrid::new(1, 64, 16.0).unwrap();
        let well = ShapeParams::new(Shape::Gaussian, -2.0, 1.0).sample(&grid);
        let family = make_amplitude_family(grid, &well, &well, &[-0.6, 0.6]).unwrap();
        let model = MarkovModel::two_state(1.5).unwrap();
        let series = liouville_series(&family, &model, 1e-3, 200);
        let points = energy_derivative_identity(&series, &family, &model).unwrap();
        // Both sides start at zero here, so the typical size of the
        // derivative over the run sets the scale.
        let scale = points.iter().map(|p| p.rhs.abs()).fold(0.0, f64::max);
        assert!(scale > 1e-2, "identity is vacuous: {scale}");
        for p in points {
            assert!(p.residual <= 1e-3 * p.lhs.abs().max(p.rhs.abs()).max(scale), "{p:?}");
        }
    }

    #[test]
    fn uneven_sampling_is_rejected() {
        let grid = SpatialGrid::new(1, 8, 4.0).unwrap();
        let model = MarkovModel::trivial();
        let family = PotentialFamily::zero(grid, 1);
        let mut series = liouville_series(&family, &model, 0.1, 3);
        series[2].t = 0.25;
        assert!(energy_derivative_identity(&series, &family, &model).is_err());
    }

    #[test]
    fn feynman_kac_trivial_cases() {
        let grid = SpatialGrid::new(1, 32, 16.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        let family = PotentialFamily::zero(grid, 2);
        let series = liouville_series(&family, &model, 0.05, 4);
        let lhs: Vec<MeanEstimate> =
            series.iter().map(|f| MeanEstimate { t: f.t, mean: 0.0, std_error: 0.0 }).collect();
        for p in feynman_kac_residual(&lhs, &series, &family, RESIDUAL_FLOOR).unwrap() {
            assert_eq!((p.rhs, p.relative, p.integrated_relative), (0.0, 0.0, 0.0));
        }
        let shifted: Vec<MeanEstimate> = lhs.iter().map(|e| MeanEstimate { t: e.t + 0.01, ..*e }).collect();
        assert!(feynman_kac_residual(&shifted, &series, &family, RESIDUAL_FLOOR).is_err());
    }

    #[test]
    fn decay_fit_recovers_power_laws() {
        let pure: Vec<(f64, f64)> = (1..=40).map(|i| (i as f64 * 0.5, 3.0 * (i as f64 * 0.5).powf(-1.5))).collect();
        let fit = decay_fit(&pure, (1.0, 20.0)).unwrap();
        assert!((fit.slope + 1.5).abs() <= 1e-6);
        assert!((fit.intercept - 3.0f64.ln()).abs() <= 1e-9);
        assert!(fit.residual <= 1e-12 && fit.confidence <= 1e-9);
        assert!(fit.series.iter().all(|&(t, _)| (1.0..=20.0).contains(&t)));

        let flat: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 2.0)).collect();
        assert!(decay_fit(&flat, (1.0, 10.0)).unwrap().slope.abs() <= 1e-12);
        let bad: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 1.0 - i as f64 * 0.2)).collect();
        assert!(decay_fit(&bad, (1.0, 10.0)).is_err());
    }

    #[test]
    fn free_gaussian_sum_norm_decays_like_sqrt() {
        let grid = SpatialGrid::new(1, 4096, 1024.0).unwrap();
        let psi = gaussian(grid, 1.0, 0.0, 0.0);
        let family = PotentialFamily::zero(grid, 1);
        let cfg = SolverConfig::uniform(0.05, SplitOrder::Strang, 50.0, 20).unwrap().without_scalars();
        let out =
            evolve_path(&psi, &family, &crate::markov::PathSample::constant(0, 50.0), &HartreeKernel::none(grid), &cfg)
                .unwrap();
        let series: Vec<(f64, f64)> = out.times.iter().zip(&out.snapshots).map(|(&t, s)| (t, sum_norm(s))).collect();
        let fit = decay_fit(&series, (5.0, 50.0)).unwrap();
        assert!((fit.slope + 0.5).abs() <= 0.05, "{fit:?}");
        assert!(out.last().wraparound_mass() <= 1e-6);
    }

    #[test]
    fn strichartz_simple_cases() {
        let grid = SpatialGrid::new(1, 32, 8.0).unwrap();
        let zero = vec![WaveField::zeros(grid); 5];
        assert_eq!(strichartz_norm(&zero, 0.1, 2.0, 6.0, 2.0).unwrap(), 0.0);
        let psi = gaussian(grid, 1.0, 0.0, 0.0);
        let constant = vec![psi.clone(); 40];
        let expected = 4.0f64.powf(0.5) * lorentz_norm(&psi, 6.0, 2.0).unwrap();
        assert!((strichartz_norm(&constant, 0.1, 2.0, 6.0, 2.0).unwrap() - expected).abs() <= 1e-12 * expected);
        assert!(strichartz_norm(&constant, 0.1, 0.5, 6.0, 2.0).is_err());
    }

    #[test]
    fn ensemble_norm_orders() {
        let a = vec![1.0, 1.0, 1.0];
        let b = vec![3.0, 3.0, 3.0];
        let both = ensemble_space_time_norm(&[a.clone(), b.clone()], 1.0, 2.0, 2.0).unwrap();
        // Equal exponents: Fubini makes the orders agree.
        assert!((both.omega_outside - both.omega_inside).abs() <= 1e-12);
        let mixed = ensemble_space_time_norm(&[a, b], 1.0, f64::INFINITY, 2.0).unwrap();
        assert!((mixed.omega_outside - 5.0f64.sqrt()).abs() <= 1e-12);
        assert!((mixed.omega_inside - 5.0f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn gauge_offsets_only_change_the_phase() {
        let grid = SpatialGrid::new(1, 64, 20.0).unwrap();
        let base = ShapeParams::new(Shape::Gaussian, -1.0, 1.5).sample(&grid);
        let gauge = make_gauge_family(grid, &base, &[0.0, 2.5, -1.0]).unwrap();
        let flat = PotentialFamily::uniform(grid, &base, 3).unwrap();
        let model = MarkovModel::complete_graph(3, 2.0).unwrap();
        let kernel = HartreeKernel::gaussian(grid, 1.0, 0.5).unwrap();
        let psi = gaussian(grid, 1.0, 0.0, 1.0);
        let cfg = SolverConfig::uniform(0.01, SplitOrder::Strang, 2.0, 10).unwrap();
        for seed in 0..4 {
            let path = sample_path(&model, 2.0, seed).unwrap();
            let a = evolve_path(&psi, &gauge, &path, &kernel, &cfg).unwrap();
            let b = evolve_path(&psi, &flat, &path, &kernel, &cfg).unwrap();
            for (sa, sb) in a.scalars.iter().zip(&b.scalars) {
                assert!((sa.l2 - sb.l2).abs() <= 1e-12);
                assert!((sa.sum_norm - sb.sum_norm).abs() <= 1e-12);
                assert!((sa.energy.kinetic - sb.energy.kinetic).abs() <= 1e-10);
            }
            for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
                let moduli =
                    sa.values().iter().zip(sb.values()).map(|(x, y)| (x.norm() - y.norm()).abs()).fold(0.0, f64::max);
                assert!(moduli <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn decay_fit_is_exact_on_power_laws(c in 0.1f64..10.0, rate in -3.0f64..1.0, t0 in 0.5f64..2.0) {
            let series: Vec<(f64, f64)> = (0..30).map(|i| {
                let t = t0 * 1.1f64.powi(i);
                (t, c * t.powf(rate))
            }).collect();
            let fit = decay_fit(&series, (t0, t0 * 20.0)).unwrap();
            prop_assert!((fit.slope - rate).abs() <= 1e-9);
            prop_assert!(fit.residual <= 1e-10);
        }

        #[test]
        fn energy_is_translation_invariant(s in -40i64..40, amp in -3.0f64..3.0, k in -2.0f64..2.0) {
            let grid = SpatialGrid::new(1, 64, 16.0).unwrap();
            let kernel = HartreeKernel::gaussian(grid, 0.5, 0.4).unwrap();
            let v = ShapeParams::new(Shape::Sech2, amp, 1.0).sample(&grid);
            let psi = gaussian(grid, 1.2, 1.0, k);
            let e = energy_breakdown(&psi, &v, &kernel, 0.0).unwrap();
            let mut sv = vec![0.0; 64];
            let mut sp = vec![Complex64::new(0.0, 0.0); 64];
            for i in 0..64 {
                sv[grid.shift(i, &[s])] = v[i];
                sp[grid.shift(i, &[s])] = psi.values()[i];
            }
            let shifted = energy_breakdown(&WaveField::new(grid, sp).unwrap(), &sv, &kernel, 0.0).unwrap();
            prop_assert!((shifted.total - e.total).abs() <= 1e-11 * e.total.abs().max(1.0));
        }
    }
}
