//! Monte Carlo over Markov paths with exact conditioning on the current
//! state.
//!
//! Paths are split into fixed-size chunks. Chunks run in parallel, each sums
//! its paths in index order, and the chunk sums are combined in chunk order,
//! so results do not depend on the thread count.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::averaged::{AveragedDensityMatrix, AveragedField, DEFAULT_LIOUVILLE_CAP};
use crate::diagnostics::EnergyBreakdown;
use crate::grid::{SpatialGrid, WaveField};
use crate::markov::{sample_path, split_seed, MarkovModel};
use crate::potential::{HartreeKernel, PotentialFamily};
use crate::propagator::{evolve_path, SolverConfig, TrajectoryOutput};
use crate::{Error, Result};

/// Paths per work item.
pub const CHUNK: usize = 64;
/// Bins with fewer paths than this are flagged in estimates.
pub const MIN_BIN_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Double,
    /// Neumaier-compensated sums.
    Compensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `E{· | X_t = y}`.
    Conditional,
    /// `E{· 1_{X_t = y}}`.
    Joint,
}

/// Initial data, possibly depending on the starting state.
#[derive(Debug, Clone)]
pub enum InitialData {
    Fixed(WaveField),
    PerState(Vec<WaveField>),
}

impl InitialData {
    pub fn for_state(&self, y: usize) -> Result<&WaveField> {
        match self {
            InitialData::Fixed(f) => Ok(f),
            InitialData::PerState(t) => {
                t.get(y).ok_or_else(|| Error::InvalidArgument(format!("no initial field for state {y}")))
            }
        }
    }

    pub fn grid(&self) -> Result<&SpatialGrid> {
        Ok(self.for_state(0)?.grid())
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub master_seed: u64,
    pub reduction: Reduction,
    /// Also accumulate `ψ ⊗ ψ̄` (one dimension only).
    pub density_matrix: bool,
}

impl EnsembleConfig {
    pub fn new(paths: usize, master_seed: u64) -> Self {
        Self { paths, master_seed, reduction: Reduction::Double, density_matrix: false }
    }

    pub fn with_density_matrix(mut self) -> Self {
        self.density_matrix = true;
        self
    }

    pub fn compensated(mut self) -> Self {
        self.reduction = Reduction::Compensated;
        self
    }
}

/// Per-sample scalars of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub t: f64,
    pub state: usize,
    pub l2: f64,
    pub sum_norm: f64,
    pub energy: EnergyBreakdown,
    /// `∫ |V(x, ω(t))| |ψ(x, t)|² dx`.
    pub potential_weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub index: usize,
    pub seed: u64,
    pub initial_state: usize,
    pub jumps: usize,
    pub records: Vec<PathRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Running sums, optionally compensated.
#[derive(Debug, Clone)]
struct Sums {
    sum: Vec<f64>,
    comp: Option<Vec<f64>>,
}

impl Sums {
    fn new(len: usize, reduction: Reduction) -> Self {
        Self { sum: vec![0.0; len], comp: (reduction == Reduction::Compensated).then(|| vec![0.0; len]) }
    }

    fn add(&mut self, xs: impl Iterator<Item = f64>) {
        match self.comp.as_mut() {
            None => self.sum.iter_mut().zip(xs).for_each(|(s, x)| *s += x),
            Some(c) => self.sum.iter_mut().zip(c.iter_mut()).zip(xs).for_each(|((s, c), x)| neumaier(s, c, x)),
        }
    }

    fn merge(&mut self, other: &Sums) {
        let other_values = other.values();
        self.add(other_values.into_iter());
    }

    fn values(&self) -> Vec<f64> {
        match &self.comp {
            None => self.sum.clone(),
            Some(c) => self.sum.iter().zip(c).map(|(s, c)| s + c).collect(),
        }
    }
}

fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Sums over the paths sitting in one state at one sample time.
#[derive(Debug, Clone)]
struct Bin {
    count: usize,
    /// Interleaved `Re, Im` of `Σ ψ`.
    psi: Sums,
    /// `Σ |ψ|²`.
    sq: Sums,
    /// Column-major interleaved `Σ ψ ψ̄ᵀ`.
    outer: Option<Sums>,
    /// Column-major `Σ |ψ_i|² |ψ_j|²`.
    outer_sq: Option<Sums>,
}

impl Bin {
    fn new(n: usize, cfg: &EnsembleConfig) -> Self {
        Self {
            count: 0,
            psi: Sums::new(2 * n, cfg.reduction),
            sq: Sums::new(n, cfg.reduction),
            outer: cfg.density_matrix.then(|| Sums::new(2 * n * n, cfg.reduction)),
            outer_sq: cfg.density_matrix.then(|| Sums::new(n * n, cfg.reduction)),
        }
    }

    fn add(&mut self, psi: &[Complex64]) {
        self.count += 1;
        self.psi.add(psi.iter().flat_map(|c| [c.re, c.im]));
        self.sq.add(psi.iter().map(|c| c.norm_sqr()));
        if let Some(o) = self.outer.as_mut() {
            o.add(psi.iter().flat_map(|b| psi.iter().map(move |a| a * b.conj())).flat_map(|c| [c.re, c.im]));
        }
        if let Some(o) = self.outer_sq.as_mut() {
            o.add(psi.iter().flat_map(|b| psi.iter().map(move |a| a.norm_sqr() * b.norm_sqr())));
        }
    }

    fn merge(&mut self, other: &Bin) {
        self.count += other.count;
        self.psi.merge(&other.psi);
        self.sq.merge(&other.sq);
        if let (Some(a), Some(b)) = (self.outer.as_mut(), other.outer.as_ref()) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (self.outer_sq.as_mut(), other.outer_sq.as_ref()) {
            a.merge(b);
        }
    }
}

/// Exact per-state sums of the ensemble at each sample time.
#[derive(Debug, Clone)]
pub struct ConditionalAverage {
    pub paths: usize,
    pub times: Vec<f64>,
    grid: SpatialGrid,
    states: usize,
    /// `bins[t][y]`.
    bins: Vec<Vec<Bin>>,
}

#[derive(Debug, Clone)]
pub struct FieldEstimate {
    pub t: f64,
    pub weighting: Weighting,
    pub field: AveragedField,
    /// Standard error of each entry, per state.
    pub std_error: Vec<Vec<f64>>,
    /// States whose bin holds fewer than [`MIN_BIN_COUNT`] paths.
    pub sparse_states: Vec<usize>,
}

impl FieldEstimate {
    /// `(Σ_y Σ_x h se²)^{1/2}`: the expected `L²` size of the sampling error.
    pub fn l2_std_error(&self) -> f64 {
        let h = self.field.grid().cell_volume();
        (h * self.std_error.iter().flatten().map(|s| s * s).sum::<f64>()).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub t: f64,
    pub weighting: Weighting,
    pub matrix: AveragedDensityMatrix,
    pub std_error: Vec<DMatrix<f64>>,
    pub sparse_states: Vec<usize>,
}

impl ConditionalAverage {
    fn empty(grid: SpatialGrid, states: usize, times: &[f64], cfg: &EnsembleConfig) -> Self {
        let n = grid.len();
        Self {
            paths: 0,
            times: times.to_vec(),
            grid,
            states,
            bins: times.iter().map(|_| (0..states).map(|_| Bin::new(n, cfg)).collect()).collect(),
        }
    }

    fn merge(&mut self, other: &ConditionalAverage) {
        self.paths += other.paths;
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `counts[t][y]`.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        self.bins.iter().map(|row| row.iter().map(|b| b.count).collect()).collect()
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0)).ok_or(Error::NotSampled(t))
    }

    fn bin(&self, ti: usize, y: usize) -> Result<&Bin> {
        self.bins
            .get(ti)
            .and_then(|row| row.get(y))
            .ok_or_else(|| Error::InvalidArgument(format!("no bin for sample {ti}, state {y}")))
    }

    /// `E{ψ(t) | X_t = y}`; an empty bin is missing data, not zero.
    pub fn conditional_mean(&self, ti: usize, y: usize) -> Result<WaveField> {
        let b = self.bin(ti, y)?;
        if b.count == 0 {
            return Err(Error::MissingData(format!("no path in state {y} at t = {}", self.times[ti])));
        }
        let s = b.psi.values();
        let c = b.count as f64;
        WaveField::new(self.grid, s.chunks(2).map(|p| Complex64::new(p[0], p[1]) / c).collect())
    }

    fn divisor(&self, b: &Bin, weighting: Weighting, ti: usize, y: usize) -> Result<f64> {
        match weighting {
            Weighting::Joint => Ok(self.paths as f64),
            Weighting::Conditional if b.count == 0 => {
                Err(Error::MissingData(format!("no path in state {y} at t = {}", self.times[ti])))
            }
            Weighting::Conditional => Ok(b.count as f64),
        }
    }

    /// Estimate of `g` (conditional) or `u` (joint) at sample index `ti`.
    pub fn estimate_g(&self, ti: usize, weighting: Weighting) -> Result<FieldEstimate> {
        let mut states = Vec::with_capacity(self.states);
        let mut std_error = Vec::with_capacity(self.states);
        let mut sparse = Vec::new();
        for y in 0..self.states {
            let b = self.bin(ti, y)?;
            if b.count < MIN_BIN_COUNT {
                sparse.push(y);
            }
            let k = self.divisor(b, weighting, ti, y)?;
            let s = b.psi.values();
            let sq = b.sq.values();
            let mean: Vec<Complex64> = s.chunks(2).map(|p| Complex64::new(p[0], p[1]) / k).collect();
            let se = mean.iter().zip(&sq).map(|(m, q)| standard_error(q / k, m.norm_sqr(), k)).collect();
            states.push(WaveField::new(self.grid, mean)?);
            std_error.push(se);
        }
        Ok(FieldEstimate {
            t: self.times[ti],
            weighting,
            field: AveragedField { t: self.times[ti], states },
            std_error,
            sparse_states: sparse,
        })
    }

    /// Estimate of `f` at sample index `ti`; needs a run with
    /// [`EnsembleConfig::density_matrix`].
    pub fn estimate_f(&self, ti: usize, weighting: Weighting) -> Result<DensityEstimate> {
        let n = self.grid.len();
        let mut mats = Vec::with_capacity(self.states);
        let mut errs = Vec::with_capacity(self.states);
        let mut sparse = Vec::new();
        for y in 0..self.states {
            let b = self.bin(ti, y)?;
            let (outer, outer_sq) = match (&b.outer, &b.outer_sq) {
                (Some(o), Some(q)) => (o.values(), q.values()),
                _ => return Err(Error::MissingData("ensemble ran without density-matrix sums".into())),
            };
            if b.count < MIN_BIN_COUNT {
                sparse.push(y);
            }
            let k = self.divisor(b, weighting, ti, y)?;
            let mean = DMatrix::from_iterator(n, n, outer.chunks(2).map(|p| Complex64::new(p[0], p[1]) / k));
            let se = DMatrix::from_iterator(
                n,
                n,
                mean.iter().zip(&outer_sq).map(|(m, q)| standard_error(q / k, m.norm_sqr(), k)),
            );
            mats.push(mean);
            errs.push(se);
        }
        let mut matrix = AveragedDensityMatrix::new(self.grid, mats, DEFAULT_LIOUVILLE_CAP.max(n))?;
        matrix.t = self.times[ti];
        Ok(DensityEstimate { t: self.times[ti], weighting, matrix, std_error: errs, sparse_states: sparse })
    }
}

/// Standard error of a mean over `k` samples from its first two moments.
fn standard_error(second: f64, first_sq: f64, k: f64) -> f64 {
    if k < 2.0 {
        return f64::INFINITY;
    }
    let var = (second - first_sq).max(0.0) * k / (k - 1.0);
    (var / k).sqrt()
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub average: ConditionalAverage,
    pub summaries: Vec<PathSummary>,
}

/// `∫ |V| |ψ|²`.
pub fn potential_weight(psi: &WaveField, v: &[f64]) -> f64 {
    psi.grid().cell_volume() * psi.values().iter().zip(v).map(|(p, a)| a.abs() * p.norm_sqr()).sum::<f64>()
}

/// Runs `work(i, seed_i)` for every path index with `seed_i = split_seed(master, i)`,
/// in parallel, returning results in index order.
pub fn map_paths<T: Send>(
    paths: usize,
    master_seed: u64,
    work: impl Fn(usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..paths).into_par_iter().map(|i| work(i, split_seed(master_seed, i as u64))).collect()
}

fn summarize(
    index: usize,
    seed: u64,
    path: &crate::markov::PathSample,
    out: &TrajectoryOutput,
    family: &PotentialFamily,
) -> Result<PathSummary> {
    let mut records = Vec::with_capacity(out.times.len());
    for (k, (&t, psi)) in out.times.iter().zip(&out.snapshots).enumerate() {
        let state = path.state_at(t)?;
        let s = out.scalars.get(k).ok_or_else(|| Error::MissingData("path run without scalar records".into()))?;
        records.push(PathRecord {
            t,
            state,
            l2: s.l2,
            sum_norm: s.sum_norm,
            energy: s.energy,
            potential_weight: potential_weight(psi, family.state(state)),
        });
    }
    Ok(PathSummary { index, seed, initial_state: path.initial_state(), jumps: path.jump_times.len(), records })
}

pub fn run_ensemble(
    initial: &InitialData,
    family: &PotentialFamily,
    model: &MarkovModel,
    kernel: &HartreeKernel,
    solver: &SolverConfig,
    cfg: &EnsembleConfig,
) -> Result<EnsembleOutput> {
    if cfg.paths == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
    }
    solver.validate()?;
    let grid = *initial.grid()?;
    if cfg.density_matrix && grid.dim() != 1 {
        return Err(Error::InvalidArgument("density-matrix sums are only supported in one dimension".into()));
    }
    let solver = SolverConfig { record_scalars: true, ..solver.clone() };
    let horizon = solver.horizon();
    let times = solver.sample_times.clone();
    let m = model.states();
    let chunks = cfg.paths.div_ceil(CHUNK);

    let partials: Vec<(ConditionalAverage, Vec<PathSummary>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = ConditionalAverage::empty(grid, m, &times, cfg);
            let mut summaries = Vec::with_capacity(CHUNK);
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.paths) {
                let seed = split_seed(cfg.master_seed, i as u64);
                let path = sample_path(model, horizon, seed)?;
                let psi0 = initial.for_state(path.initial_state())?;
                let out = evolve_path(psi0, family, &path, kernel, &solver)?;
                for (ti, (&t, psi)) in out.times.iter().zip(&out.snapshots).enumerate() {
                    acc.bins[ti][path.state_at(t)?].add(psi.values());
                }
                acc.paths += 1;
                summaries.push(summarize(i, seed, &path, &out, family)?);
            }
            Ok((acc, summaries))
        })
        .collect::<Result<_>>()?;

    let mut average = ConditionalAverage::empty(grid, m, &times, cfg);
    let mut summaries = Vec::with_capacity(cfg.paths);
    for (acc, s) in &partials {
        average.merge(acc);
        summaries.extend_from_slice(s);
    }
    Ok(EnsembleOutput { average, summaries })
}

fn mean_series(summaries: &[PathSummary], value: impl Fn(&PathRecord) -> f64) -> Result<Vec<MeanEstimate>> {
    let first = summaries.first().ok_or_else(|| Error::MissingData("no paths".into()))?;
    let k = summaries.len() as f64;
    (0..first.records.len())
        .map(|ti| {
            let (mut s, mut q) = (0.0, 0.0);
            for p in summaries {
                let v = value(p.records.get(ti).ok_or_else(|| Error::MissingData("ragged path records".into()))?);
                s += v;
                q += v * v;
            }
            let mean = s / k;
            Ok(MeanEstimate { t: first.records[ti].t, mean, std_error: standard_error(q / k, mean * mean, k) })
        })
        .collect()
}

/// `E ∫ |V_ω(x, t)| |ψ_ω(x, t)|² dx` with its standard error.
pub fn feynman_kac_lhs(summaries: &[PathSummary]) -> Result<Vec<MeanEstimate>> {
    mean_series(summaries, |r| r.potential_weight)
}

/// `E{h(ω(t)) E_ω(t)}` with `E_ω` the path energy.
pub fn weighted_energy_average(summaries: &[PathSummary], model: &MarkovModel) -> Result<Vec<MeanEstimate>> {
    let h = model.ground_state();
    mean_series(summaries, |r| h[r.state] * r.energy.total)
}

/// Fraction of paths starting in each state, as used by the ensemble.
pub fn empirical_initial_law(summaries: &[PathSummary], states: usize) -> Vec<f64> {
    let mut p = vec![0.0; states];
    for s in summaries {
        p[s.initial_state] += 1.0;
    }
    let k = summaries.len().max(1) as f64;
    p.iter_mut().for_each(|v| *v /= k);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaged::{solve_scalar_averaged, AveragedConfig};
    use crate::grid::{laplacian_symbol, phase_multiplier, Fourier};
    use crate::markov::{InitialLaw, PathSample};
    use crate::potential::{make_amplitude_family, Shape, ShapeParams};
    use crate::propagator::SplitOrder;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(1, 32, 16.0).unwrap()
    }

    fn packet(g: SpatialGrid) -> WaveField {
        WaveField::from_fn(g, |x| Complex64::from_polar((-0.5 * x[0] * x[0]).exp(), 0.8 * x[0]))
    }

    fn pm_family(g: SpatialGrid) -> PotentialFamily {
        let b = ShapeParams::new(Shape::Gaussian, 1.0, 1.0).sample(&g);
        make_amplitude_family(g, &vec![0.0; g.len()], &b, &[-1.0, 1.0]).unwrap()
    }

    fn solver() -> SolverConfig {
        SolverConfig::uniform(0.02, SplitOrder::Strang, 1.0, 10).unwrap()
    }

    #[test]
    fn single_state_ensemble_is_deterministic() {
        let g = grid();
        let fam = PotentialFamily::uniform(g, &ShapeParams::new(Shape::Gaussian, 1.0, 1.0).sample(&g), 1).unwrap();
        let model = MarkovModel::trivial();
        let kernel = HartreeKernel::none(g);
        let out =
            run_ensemble(&InitialData::Fixed(packet(g)), &fam, &model, &kernel, &solver(), &EnsembleConfig::new(7, 1))
                .unwrap();
        let direct = evolve_path(&packet(g), &fam, &PathSample::constant(0, 1.0), &kernel, &solver()).unwrap();
        for (ti, snap) in direct.snapshots.iter().enumerate() {
            let est = out.average.estimate_g(ti, Weighting::Conditional).unwrap();
            assert!(est.field.states[0].max_abs_diff(snap) <= 1e-12);
            let joint = out.average.estimate_g(ti, Weighting::Joint).unwrap();
            assert!(joint.field.states[0].max_abs_diff(snap) <= 1e-12);
        }
    }

    #[test]
    fn one_path_fills_one_bin() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let out = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &pm_family(g),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(1, 5),
        )
        .unwrap();
        let path = sample_path(&model, 1.0, split_seed(5, 0)).unwrap();
        for (ti, &t) in out.average.times.iter().enumerate() {
            let y = path.state_at(t).unwrap();
            assert!(out.average.conditional_mean(ti, y).is_ok());
            assert!(matches!(out.average.conditional_mean(ti, 1 - y), Err(Error::MissingData(_))));
            assert!(matches!(out.average.estimate_g(ti, Weighting::Conditional), Err(Error::MissingData(_))));
        }
    }

    #[test]
    fn counts_are_exact_and_reproducible() {
        let g = grid();
        let model = MarkovModel::complete_graph(3, 0.7).unwrap();
        let b = ShapeParams::new(Shape::Gaussian, 1.0, 1.0).sample(&g);
        let fam = make_amplitude_family(g, &vec![0.0; g.len()], &b, &[-1.0, 0.0, 1.0]).unwrap();
        let cfg = EnsembleConfig::new(150, 42);
        let a = run_ensemble(&InitialData::Fixed(packet(g)), &fam, &model, &HartreeKernel::none(g), &solver(), &cfg)
            .unwrap();
        for row in a.average.counts() {
            assert_eq!(row.iter().sum::<usize>(), 150);
        }
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = single.install(|| {
            run_ensemble(&InitialData::Fixed(packet(g)), &fam, &model, &HartreeKernel::none(g), &solver(), &cfg)
                .unwrap()
        });
        for ti in 0..a.average.times.len() {
            let x = a.average.estimate_g(ti, Weighting::Joint).unwrap();
            let y = b.average.estimate_g(ti, Weighting::Joint).unwrap();
            assert_eq!(x.field, y.field);
        }
    }

    #[test]
    fn zero_potential_decouples_from_the_path() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let out = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &PotentialFamily::zero(g, 2),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(200, 3),
        )
        .unwrap();
        let t = 1.0;
        let mut free = packet(g).into_values();
        Fourier::new(g).apply_multiplier(&mut free, &phase_multiplier(&laplacian_symbol(&g), t)).unwrap();
        let free = WaveField::new(g, free).unwrap();
        let ti = out.average.time_index(t).unwrap();
        let est = out.average.estimate_g(ti, Weighting::Conditional).unwrap();
        for y in 0..2 {
            assert!(est.field.states[y].max_abs_diff(&free) <= 1e-10);
        }
    }

    #[test]
    fn joint_estimate_tracks_the_averaged_equation() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let fam = pm_family(g);
        let cfg = solver();
        let out = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &fam,
            &model,
            &HartreeKernel::none(g),
            &cfg,
            &EnsembleConfig::new(800, 9),
        )
        .unwrap();
        let det = solve_scalar_averaged(
            &AveragedField::from_initial(&packet(g), &model),
            &fam,
            &model,
            &AveragedConfig::new(cfg.dt, cfg.sample_times.clone()),
            None,
        )
        .unwrap();
        for (ti, d) in det.iter().enumerate().skip(1) {
            let est = out.average.estimate_g(ti, Weighting::Joint).unwrap();
            let err = est.field.l2_distance(d);
            assert!(err <= 3.0 * est.l2_std_error(), "t = {}: {err:e} vs {:e}", d.t, est.l2_std_error());
        }
    }

    #[test]
    fn standard_errors_shrink_like_root_n() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let fam = pm_family(g);
        let se = |n| {
            let out = run_ensemble(
                &InitialData::Fixed(packet(g)),
                &fam,
                &model,
                &HartreeKernel::none(g),
                &solver(),
                &EnsembleConfig::new(n, 21),
            )
            .unwrap();
            let ti = out.average.time_index(1.0).unwrap();
            out.average.estimate_g(ti, Weighting::Joint).unwrap().l2_std_error()
        };
        let ratio = se(1600) / se(400);
        assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn density_estimate_diagonal_is_nonnegative() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let out = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &pm_family(g),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(100, 4).with_density_matrix(),
        )
        .unwrap();
        let est = out.average.estimate_f(5, Weighting::Joint).unwrap();
        for (y, m) in est.matrix.states.iter().enumerate() {
            for i in 0..g.n() {
                assert!(m[(i, i)].re >= -est.std_error[y][(i, i)]);
            }
        }
        let rho = out.average.estimate_g(5, Weighting::Joint).unwrap();
        // The joint trace equals E‖ψ‖² = ‖ψ₀‖².
        let total: f64 = est.matrix.trace().total;
        assert!((total - packet(g).l2_norm().powi(2)).abs() <= 1e-10);
        assert_eq!(rho.sparse_states.len(), 0);
        let no_f = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &pm_family(g),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(3, 4),
        )
        .unwrap();
        assert!(matches!(no_f.average.estimate_f(0, Weighting::Joint), Err(Error::MissingData(_))));
    }

    #[test]
    fn compensated_reduction_agrees() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let run = |cfg: EnsembleConfig| {
            run_ensemble(
                &InitialData::Fixed(packet(g)),
                &pm_family(g),
                &model,
                &HartreeKernel::none(g),
                &solver(),
                &cfg,
            )
            .unwrap()
        };
        let a = run(EnsembleConfig::new(130, 8));
        let b = run(EnsembleConfig::new(130, 8).compensated());
        let x = a.average.estimate_g(5, Weighting::Joint).unwrap();
        let y = b.average.estimate_g(5, Weighting::Joint).unwrap();
        assert!(x.field.l2_distance(&y.field) <= 1e-13);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let (mut s, mut c) = (0.0, 0.0);
        for x in [1.0, 1e100, 1.0, -1e100] {
            neumaier(&mut s, &mut c, x);
        }
        assert_eq!(s + c, 2.0);
    }

    #[test]
    fn feynman_kac_and_energy_series() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap();
        let kernel = HartreeKernel::none(g);
        let zero = run_ensemble(
            &InitialData::Fixed(packet(g)),
            &PotentialFamily::zero(g, 2),
            &model,
            &kernel,
            &solver(),
            &EnsembleConfig::new(20, 2),
        )
        .unwrap();
        assert!(feynman_kac_lhs(&zero.summaries).unwrap().iter().all(|e| e.mean == 0.0));
        let energy = weighted_energy_average(&zero.summaries, &model).unwrap();
        let first = energy[0].mean;
        for e in &energy {
            assert!((e.mean - first).abs() <= 1e-10 * first.abs());
        }

        let fam = pm_family(g);
        let out =
            run_ensemble(&InitialData::Fixed(packet(g)), &fam, &model, &kernel, &solver(), &EnsembleConfig::new(50, 2))
                .unwrap();
        let lhs = feynman_kac_lhs(&out.summaries).unwrap();
        let p = empirical_initial_law(&out.summaries, 2);
        let rhs0: f64 = (0..2).map(|y| p[y] * potential_weight(&packet(g), fam.state(y))).sum();
        assert!((lhs[0].mean - rhs0).abs() <= 1e-10 * rhs0);
    }

    #[test]
    fn per_state_initial_data() {
        let g = grid();
        let model = MarkovModel::two_state(1.0).unwrap().with_initial_law(InitialLaw::Dirac(1)).unwrap();
        let table = InitialData::PerState(vec![WaveField::zeros(g), packet(g)]);
        let out = run_ensemble(
            &table,
            &pm_family(g),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(10, 1),
        )
        .unwrap();
        assert!(out.summaries.iter().all(|s| s.initial_state == 1));
        assert!(out.average.conditional_mean(0, 1).unwrap().max_abs_diff(&packet(g)) <= 1e-15);
        assert!(run_ensemble(
            &table,
            &pm_family(g),
            &model,
            &HartreeKernel::none(g),
            &solver(),
            &EnsembleConfig::new(0, 1)
        )
        .is_err());
    }
}
