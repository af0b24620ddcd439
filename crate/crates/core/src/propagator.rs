//! Per-path split-step solver for
//! `i ψ_t − Δψ + V_ω ψ + ε (χ ∗ |ψ|²) ψ = Ψ_ω`.
//!
//! Each step factors into the free flow `e^{−isΔ}` (spectral phase
//! `e^{+is|k|²}`) and the pointwise phase `e^{+is(V + ε χ∗|ψ|²)}`. Steps are
//! cut at the path's jump times so the potential is constant on every
//! substep. A source enters with a minus sign: `ψ_t = −iΔψ + i(V + W)ψ − iΨ`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{energy_breakdown_with, EnergyBreakdown};
use crate::grid::{laplacian_symbol, phase_multiplier, sum_norm, Fourier, SpatialGrid, WaveField};
use crate::markov::{PathPrefix, PathSample};
use crate::potential::{HartreeKernel, PotentialFamily};
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitOrder {
    /// `K(s) P(s)`, first order.
    Lie,
    /// `K(s/2) P(s) K(s/2)`, second order.
    Strang,
}

impl SplitOrder {
    pub fn from_order(order: u32) -> Result<Self> {
        match order {
            1 => Ok(SplitOrder::Lie),
            2 => Ok(SplitOrder::Strang),
            other => Err(Error::InvalidArgument(format!("splitting order must be 1 or 2, got {other}"))),
        }
    }
}

/// An adapted forcing term `Ψ_ω(x, t)`.
///
/// The solver only ever hands over the path restricted to `[0, t]`, so an
/// implementation cannot look into the future of the driving process.
pub trait SourceTerm: Send + Sync {
    fn evaluate(&self, t: f64, history: &PathPrefix<'_>, grid: &SpatialGrid, out: &mut [Complex64]);
}

#[derive(Clone)]
pub struct SolverConfig {
    pub dt: f64,
    pub order: SplitOrder,
    /// Increasing times in `[0, T]`; the run stops at the last one.
    pub sample_times: Vec<f64>,
    pub source: Option<Arc<dyn SourceTerm>>,
    /// Compute `‖ψ‖₂`, the `L² + L^∞` surrogate and the energy at each sample.
    pub record_scalars: bool,
}

impl fmt::Debug for SolverConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverConfig")
            .field("dt", &self.dt)
            .field("order", &self.order)
            .field("sample_times", &self.sample_times.len())
            .field("source", &self.source.is_some())
            .field("record_scalars", &self.record_scalars)
            .finish()
    }
}

impl SolverConfig {
    pub fn new(dt: f64, order: SplitOrder, sample_times: Vec<f64>) -> Self {
        Self { dt, order, sample_times, source: None, record_scalars: true }
    }

    /// Samples at `0, every·dt, 2·every·dt, …` up to `horizon`.
    pub fn uniform(dt: f64, order: SplitOrder, horizon: f64, every: usize) -> Result<Self> {
        if !(dt > 0.0) || every == 0 {
            return Err(Error::InvalidArgument("dt and sampling stride must be positive".into()));
        }
        let steps = (horizon / dt).round() as usize;
        let times = (0..=steps).step_by(every).map(|k| k as f64 * dt).collect();
        Ok(Self::new(dt, order, times))
    }

    pub fn with_source(mut self, source: Arc<dyn SourceTerm>) -> Self {
        self.source = Some(source);
        self
    }

    pub fn without_scalars(mut self) -> Self {
        self.record_scalars = false;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.sample_times.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        validate_schedule(self.dt, &self.sample_times)
    }
}

/// Checks `dt > 0` and that sample times increase from `0` in whole
/// multiples of `dt` (to `1e−12` relative).
pub fn validate_schedule(dt: f64, sample_times: &[f64]) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if sample_times.is_empty() {
        return Err(Error::InvalidArgument("at least one sample time is required".into()));
    }
    let mut prev = 0.0;
    for (i, &t) in sample_times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 || (i > 0 && t <= prev) {
            return Err(Error::InvalidArgument(format!("sample times must be increasing and >= 0 (entry {i} = {t})")));
        }
        let gap = t - prev;
        let k = (gap / dt).round();
        if (gap - k * dt).abs() > 1e-12 * gap.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample gap {gap} before t = {t} is not a multiple of dt = {dt}"
            )));
        }
        prev = t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleScalars {
    pub t: f64,
    pub l2: f64,
    pub sum_norm: f64,
    pub energy: EnergyBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub initial: WaveField,
    pub times: Vec<f64>,
    pub snapshots: Vec<WaveField>,
    /// Empty unless [`SolverConfig::record_scalars`] is set.
    pub scalars: Vec<SampleScalars>,
    /// `ψ` at every jump time crossed strictly inside the run.
    pub jump_snapshots: Vec<(f64, WaveField)>,
    pub substeps: usize,
}

impl TrajectoryOutput {
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0)).ok_or(Error::NotSampled(t))
    }

    pub fn snapshot_at(&self, t: f64) -> Result<&WaveField> {
        Ok(&self.snapshots[self.index_of(t)?])
    }

    pub fn last(&self) -> &WaveField {
        self.snapshots.last().unwrap_or(&self.initial)
    }
}

/// `ε (χ ∗ |ψ|²)` on the grid. The second value is the largest imaginary
/// part produced by the spectral convolution before it was discarded.
pub fn hartree_potential_with(
    fourier: &mut Fourier,
    psi: &[Complex64],
    kernel: &HartreeKernel,
) -> Result<(Vec<f64>, f64)> {
    if !kernel.is_active() {
        return Ok((vec![0.0; psi.len()], 0.0));
    }
    let mut buf: Vec<Complex64> = psi.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
    fourier.apply_multiplier(&mut buf, kernel.multiplier())?;
    let eps = kernel.epsilon();
    let imag = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs())) * eps.abs();
    Ok((buf.into_iter().map(|c| eps * c.re).collect(), imag))
}

pub fn hartree_potential(psi: &WaveField, kernel: &HartreeKernel) -> Result<Vec<f64>> {
    let mut fourier = Fourier::new(*psi.grid());
    Ok(hartree_potential_with(&mut fourier, psi.values(), kernel)?.0)
}

/// Single split steps with the potential of a fixed state.
pub struct Stepper<'a> {
    grid: SpatialGrid,
    fourier: Fourier,
    symbol: Vec<f64>,
    family: &'a PotentialFamily,
    kernel: &'a HartreeKernel,
    order: SplitOrder,
    cache: Vec<(u64, Vec<Complex64>)>,
}

impl<'a> Stepper<'a> {
    pub fn new(family: &'a PotentialFamily, kernel: &'a HartreeKernel, order: SplitOrder) -> Result<Self> {
        let grid = *family.grid();
        if kernel.grid() != &grid {
            return Err(Error::InvalidArgument("Hartree kernel and potential live on different grids".into()));
        }
        Ok(Self {
            grid,
            fourier: Fourier::new(grid),
            symbol: laplacian_symbol(&grid),
            family,
            kernel,
            order,
            cache: Vec::new(),
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// One step of size `dt` (negative runs backwards) with `V = V(·, state)`.
    pub fn step(&mut self, psi: &mut WaveField, dt: f64, state: usize) -> Result<()> {
        self.substep(psi.values_mut(), dt, state, None, None, None)
    }

    fn kinetic(&mut self, data: &mut [Complex64], s: f64) -> Result<()> {
        let key = s.to_bits();
        let idx = match self.cache.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                if self.cache.len() >= 4 {
                    self.cache.remove(0);
                }
                self.cache.push((key, phase_multiplier(&self.symbol, s)));
                self.cache.len() - 1
            }
        };
        let mult = std::mem::take(&mut self.cache[idx].1);
        let out = self.fourier.apply_multiplier(data, &mult);
        self.cache[idx].1 = mult;
        out
    }

    fn own_hartree(&mut self, data: &[Complex64]) -> Result<Option<Vec<f64>>> {
        if !self.kernel.is_active() {
            return Ok(None);
        }
        Ok(Some(hartree_potential_with(&mut self.fourier, data, self.kernel)?.0))
    }

    fn phase(&self, data: &mut [Complex64], s: f64, state: usize, w: Option<&[f64]>) {
        let v = self.family.state(state);
        match w {
            Some(w) => data
                .iter_mut()
                .zip(v.iter().zip(w))
                .for_each(|(d, (a, b))| *d *= Complex64::from_polar(1.0, s * (a + b))),
            None => data.iter_mut().zip(v).for_each(|(d, a)| *d *= Complex64::from_polar(1.0, s * a)),
        }
    }

    /// Advances `data` by `s`. `frozen` overrides the Hartree potential,
    /// `record` receives the one `data` itself generates at the evaluation
    /// point, `forcing` is `Ψ` at the substep midpoint.
    fn substep(
        &mut self,
        data: &mut [Complex64],
        s: f64,
        state: usize,
        frozen: Option<&[f64]>,
        record: Option<&mut Vec<Vec<f64>>>,
        forcing: Option<&[Complex64]>,
    ) -> Result<()> {
        let kick = |d: &mut [Complex64]| {
            if let Some(f) = forcing {
                d.iter_mut().zip(f).for_each(|(a, b)| *a -= I * s * b);
            }
        };
        let wants_own = record.is_some() || frozen.is_none();
        let pre = match self.order {
            SplitOrder::Strang => 0.5 * s,
            SplitOrder::Lie => s,
        };
        self.kinetic(data, pre)?;
        let own = if wants_own { self.own_hartree(data)? } else { None };
        let used = frozen.or(own.as_deref());
        match self.order {
            SplitOrder::Strang => {
                if forcing.is_some() {
                    self.phase(data, 0.5 * s, state, used);
                    kick(data);
                    self.phase(data, 0.5 * s, state, used);
                } else {
                    self.phase(data, s, state, used);
                }
                self.kinetic(data, 0.5 * s)?;
            }
            SplitOrder::Lie => {
                self.phase(data, s, state, used);
                kick(data);
            }
        }
        if let Some(rec) = record {
            rec.push(own.unwrap_or_else(|| vec![0.0; data.len()]));
        }
        Ok(())
    }
}

struct Substep {
    start: f64,
    end: f64,
    state: usize,
    /// Index into the sample times when `end` is one.
    sample: Option<usize>,
    /// `end` is a jump time of the path.
    jump: bool,
}

fn schedule(cfg: &SolverConfig, path: &PathSample) -> Result<Vec<Substep>> {
    cfg.validate()?;
    let horizon = cfg.horizon();
    if path.horizon + 1e-12 * horizon.max(1.0) < horizon {
        return Err(Error::InvalidArgument(format!(
            "path horizon {} is shorter than the last sample time {horizon}",
            path.horizon
        )));
    }
    let steps = (horizon / cfg.dt).round() as usize;
    let tol = |t: f64| 1e-12 * t.abs().max(1.0);
    let grid_time = |k: usize| if k == steps { horizon } else { k as f64 * cfg.dt };
    let sample_at: Vec<usize> = cfg.sample_times.iter().map(|t| (t / cfg.dt).round() as usize).collect();

    let mut out = Vec::new();
    let mut jumps = path.jump_times.iter().copied().filter(|&tau| tau > 0.0 && tau < horizon).peekable();
    let mut sample_idx = 0;
    while sample_idx < sample_at.len() && sample_at[sample_idx] == 0 {
        sample_idx += 1;
    }
    for k in 0..steps {
        let (a, b) = (grid_time(k), grid_time(k + 1));
        let mut cuts = vec![a];
        while let Some(&tau) = jumps.peek() {
            if tau >= b - tol(b) {
                break;
            }
            jumps.next();
            if tau > a + tol(a) {
                cuts.push(tau);
            }
        }
        cuts.push(b);
        let end_is_jump = jumps.peek().is_some_and(|&tau| (tau - b).abs() <= tol(b));
        for w in cuts.windows(2) {
            let last = w[1] == b;
            let sample = if last && sample_idx < sample_at.len() && sample_at[sample_idx] == k + 1 {
                sample_idx += 1;
                Some(sample_idx - 1)
            } else {
                None
            };
            out.push(Substep {
                start: w[0],
                end: w[1],
                state: path.state_at(0.5 * (w[0] + w[1]))?,
                sample,
                jump: !last || end_is_jump,
            });
        }
    }
    if sample_idx != sample_at.len() {
        return Err(Error::InvalidArgument("sample times could not be aligned with the step grid".into()));
    }
    Ok(out)
}

struct Run {
    output: TrajectoryOutput,
    hartree: Vec<Vec<f64>>,
}

fn run(
    psi0: &WaveField,
    family: &PotentialFamily,
    path: &PathSample,
    kernel: &HartreeKernel,
    cfg: &SolverConfig,
    frozen: Option<&[Vec<f64>]>,
    record_hartree: bool,
) -> Result<Run> {
    if psi0.grid() != family.grid() {
        return Err(Error::InvalidArgument("initial data and potential live on different grids".into()));
    }
    if !(psi0.l2_norm() > 0.0) {
        return Err(Error::InvalidArgument("initial data has zero norm".into()));
    }
    let plan = schedule(cfg, path)?;
    if let Some(f) = frozen {
        if f.len() != plan.len() {
            return Err(Error::LengthMismatch { expected: plan.len(), actual: f.len() });
        }
    }
    let grid = *psi0.grid();
    let mut stepper = Stepper::new(family, kernel, cfg.order)?;
    let mut psi = psi0.clone();
    let mut output = TrajectoryOutput {
        initial: psi0.clone(),
        times: Vec::with_capacity(cfg.sample_times.len()),
        snapshots: Vec::with_capacity(cfg.sample_times.len()),
        scalars: Vec::new(),
        jump_snapshots: Vec::new(),
        substeps: plan.len(),
    };
    let mut hartree = Vec::new();
    let mut forcing = cfg.source.as_ref().map(|_| vec![Complex64::new(0.0, 0.0); grid.len()]);

    let record =
        |stepper: &mut Stepper<'_>, out: &mut TrajectoryOutput, psi: &WaveField, t: f64, given: f64| -> Result<()> {
            out.times.push(given);
            out.snapshots.push(psi.clone());
            if cfg.record_scalars {
                let v = family.state(path.state_at(t.min(path.horizon))?);
                let energy = energy_breakdown_with(&mut stepper.fourier, &stepper.symbol, psi, v, kernel, given)?;
                out.scalars.push(SampleScalars { t: given, l2: psi.l2_norm(), sum_norm: sum_norm(psi), energy });
            }
            Ok(())
        };

    if cfg.sample_times[0] == 0.0 {
        record(&mut stepper, &mut output, &psi, 0.0, 0.0)?;
    }
    for (i, sub) in plan.iter().enumerate() {
        let s = sub.end - sub.start;
        if let (Some(src), Some(buf)) = (cfg.source.as_ref(), forcing.as_mut()) {
            let mid = sub.start + 0.5 * s;
            src.evaluate(mid, &path.prefix(mid), &grid, buf);
        }
        stepper.substep(
            psi.values_mut(),
            s,
            sub.state,
            frozen.map(|f| f[i].as_slice()),
            record_hartree.then_some(&mut hartree),
            forcing.as_deref(),
        )?;
        if !psi.is_finite() {
            return Err(Error::NonFinite { t: sub.end, what: "wave field after split step".into() });
        }
        if sub.jump && sub.end < cfg.horizon() {
            output.jump_snapshots.push((sub.end, psi.clone()));
        }
        if let Some(j) = sub.sample {
            record(&mut stepper, &mut output, &psi, sub.end, cfg.sample_times[j])?;
        }
    }
    Ok(Run { output, hartree })
}

/// Solves along one path and returns the sampled trajectory.
pub fn evolve_path(
    psi0: &WaveField,
    family: &PotentialFamily,
    path: &PathSample,
    kernel: &HartreeKernel,
    cfg: &SolverConfig,
) -> Result<TrajectoryOutput> {
    Ok(run(psi0, family, path, kernel, cfg, None, false)?.output)
}

/// `‖ψ(t) − [e^{−itΔ}ψ₀ + i∫₀ᵗ e^{−i(t−s)Δ}(Vψ + ε(χ∗|ψ|²)ψ − Ψ) ds]‖₂`, with
/// the integral taken by the trapezoid rule over the stored snapshots and
/// split at jump times. The source part uses the midpoint of each interval,
/// which never straddles a jump of an adapted source.
pub fn duhamel_residual(
    output: &TrajectoryOutput,
    family: &PotentialFamily,
    path: &PathSample,
    kernel: &HartreeKernel,
    cfg: &SolverConfig,
    t: f64,
) -> Result<f64> {
    let target = output.snapshot_at(t)?;
    if t == 0.0 {
        return Ok(target.l2_distance(&output.initial));
    }
    let grid = *target.grid();
    let mut nodes: Vec<(f64, &WaveField)> = vec![(0.0, &output.initial)];
    nodes.extend(
        output.times.iter().zip(&output.snapshots).filter(|(s, _)| **s > 0.0 && **s <= t).map(|(s, f)| (*s, f)),
    );
    nodes.extend(output.jump_snapshots.iter().filter(|(s, _)| *s < t).map(|(s, f)| (*s, f)));
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12 * a.0.max(1.0));

    let mut fourier = Fourier::new(grid);
    let symbol = laplacian_symbol(&grid);
    let mut source_fourier = Fourier::new(grid);
    // Integrand at node `s` with the potential of `state`, already moved to time t.
    let mut integrand = |s: f64, psi: &WaveField, state: usize| -> Result<Vec<Complex64>> {
        let v = family.state(state);
        let (w, _) = hartree_potential_with(&mut fourier, psi.values(), kernel)?;
        let mut g: Vec<Complex64> = psi.values().iter().zip(v.iter().zip(&w)).map(|(p, (a, b))| p * (a + b)).collect();
        fourier.apply_multiplier(&mut g, &phase_multiplier(&symbol, t - s))?;
        Ok(g)
    };
    let mut forced = |s: f64| -> Result<Vec<Complex64>> {
        let mut g = vec![Complex64::new(0.0, 0.0); grid.len()];
        if let Some(src) = cfg.source.as_ref() {
            src.evaluate(s, &path.prefix(s), &grid, &mut g);
            g.iter_mut().for_each(|v| *v = -*v);
            source_fourier.apply_multiplier(&mut g, &phase_multiplier(&symbol, t - s))?;
        }
        Ok(g)
    };

    let mut integral = vec![Complex64::new(0.0, 0.0); grid.len()];
    for w in nodes.windows(2) {
        let (a, fa) = w[0];
        let (b, fb) = w[1];
        let state = path.state_at(0.5 * (a + b))?;
        let half = 0.5 * (b - a);
        for (s, f) in [(a, fa), (b, fb)] {
            let g = integrand(s, f, state)?;
            integral.iter_mut().zip(&g).for_each(|(acc, x)| *acc += x * half);
        }
        if cfg.source.is_some() {
            let g = forced(0.5 * (a + b))?;
            integral.iter_mut().zip(&g).for_each(|(acc, x)| *acc += x * (b - a));
        }
    }
    let mut free = output.initial.values().to_vec();
    let mut fourier = Fourier::new(grid);
    fourier.apply_multiplier(&mut free, &phase_multiplier(&symbol, t))?;
    let sq: f64 =
        target.values().iter().zip(free.iter().zip(&integral)).map(|(p, (f, j))| (p - f - I * j).norm_sqr()).sum();
    Ok((sq * grid.cell_volume()).sqrt())
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// `iterates[k]` is the iterate `ψ_{k+1}`.
    pub iterates: Vec<TrajectoryOutput>,
    /// `differences[k] = Δ_{k+1} = sup_t ‖ψ_{k+1}(t) − ψ_k(t)‖₂` with `ψ_0 ≡ 0`.
    pub differences: Vec<f64>,
}

impl PicardOutcome {
    /// `Δ_{n+1} / Δ_n` for `n = 1, 2, …`.
    pub fn ratios(&self) -> Vec<f64> {
        self.differences.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }

    pub fn delta(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|k| self.differences.get(k).copied())
    }
}

/// Contraction scheme: iterate `n` solves the linear equation whose Hartree
/// potential is frozen from iterate `n − 1`, substep by substep.
pub fn picard_sequence(
    psi0: &WaveField,
    family: &PotentialFamily,
    path: &PathSample,
    kernel: &HartreeKernel,
    cfg: &SolverConfig,
    n_iters: usize,
) -> Result<PicardOutcome> {
    if n_iters < 2 {
        return Err(Error::InvalidArgument("Picard scheme needs at least 2 iterates".into()));
    }
    let cfg = SolverConfig { record_scalars: false, ..cfg.clone() };
    let steps = schedule(&cfg, path)?.len();
    let mut frozen = vec![vec![0.0; psi0.grid().len()]; steps];
    let mut iterates: Vec<TrajectoryOutput> = Vec::with_capacity(n_iters);
    let mut differences = Vec::with_capacity(n_iters);
    let mut rising = 0;
    for n in 1..=n_iters {
        let step = run(psi0, family, path, kernel, &cfg, Some(&frozen), true)?;
        let out = step.output;
        let diff = match iterates.last() {
            None => out.snapshots.iter().map(|s| s.l2_norm()).fold(0.0, f64::max),
            Some(prev) => out.snapshots.iter().zip(&prev.snapshots).map(|(a, b)| a.l2_distance(b)).fold(0.0, f64::max),
        };
        frozen = step.hartree;
        if let Some(&last) = differences.last() {
            if diff > last && diff > 1e-13 * differences[0] {
                rising += 1;
                if rising >= 3 {
                    return Err(Error::Divergence(format!(
                        "difference grew for 3 consecutive iterates (Δ_{n} = {diff:e})"
                    )));
                }
            } else {
                rising = 0;
            }
        }
        differences.push(diff);
        iterates.push(out);
    }
    Ok(PicardOutcome { iterates, differences })
}

/// `‖e^{it_{j+1}Δ}ψ(t_{j+1}) − e^{it_jΔ}ψ(t_j)‖₂` over consecutive `times`.
pub fn wave_operator_estimate(output: &TrajectoryOutput, times: &[f64]) -> Result<Vec<f64>> {
    let grid = *output.initial.grid();
    let symbol = laplacian_symbol(&grid);
    let mut fourier = Fourier::new(grid);
    let mut pulled = Vec::with_capacity(times.len());
    for &t in times {
        let mut v = output.snapshot_at(t)?.values().to_vec();
        fourier.apply_multiplier(&mut v, &phase_multiplier(&symbol, -t))?;
        pulled.push(WaveField::new(grid, v)?);
    }
    Ok(pulled.windows(2).map(|w| w[1].l2_distance(&w[0])).collect())
}
