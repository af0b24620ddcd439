//! Finite-state stationary Markov processes.
//!
//! The generator `A` is a weighted-graph Laplacian: symmetric, positive
//! semidefinite, zero row sums and non-positive off-diagonal entries. The
//! semigroup is `e^{−tA}` and `e^{−tA}(y₁, y₂) = P(X_t = y₁ | X_0 = y₂)`.
//!
//! Paths are right-continuous step functions sampled exactly from the jump
//! chain with rate matrix `Q = −A`. The PRNG is ChaCha8 seeded through
//! [`rand::SeedableRng::seed_from_u64`], which is portable across platforms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::linalg::{max_abs, sym_eigen, sym_function};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Distribution(Vec<f64>),
    Dirac(usize),
}

impl InitialLaw {
    pub fn uniform(m: usize) -> Self {
        InitialLaw::Distribution(vec![1.0 / m as f64; m])
    }

    pub fn probabilities(&self, m: usize) -> Vec<f64> {
        match self {
            InitialLaw::Distribution(p) => p.clone(),
            InitialLaw::Dirac(y) => (0..m).map(|i| if i == *y { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Result of checking a generator against the standing assumptions.
///
/// The `L¹ → L^∞` boundedness of the semigroup and its tensor-product
/// approximability hold automatically on a finite state space and are only
/// recorded, not tested.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorReport {
    pub size: usize,
    pub norm: f64,
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub row_sum_residual: f64,
    pub offdiag_sign_violations: usize,
    pub kernel_dimension: usize,
    /// `lim_{t→∞} e^{−tA}`: the projection onto the kernel of `A`.
    pub limit_kernel: Vec<Vec<f64>>,
    pub finite_state_notes: Vec<String>,
}

impl GeneratorReport {
    pub fn violations(&self) -> Vec<String> {
        let tol = 1e-10 * self.norm.max(f64::MIN_POSITIVE);
        let mut v = Vec::new();
        if self.symmetry_residual > tol {
            v.push(format!("not symmetric (residual {:e})", self.symmetry_residual));
        }
        if self.min_eigenvalue < -tol {
            v.push(format!("not positive semidefinite (min eigenvalue {:e})", self.min_eigenvalue));
        }
        if self.row_sum_residual > tol {
            v.push(format!("row sums not zero (residual {:e})", self.row_sum_residual));
        }
        if self.offdiag_sign_violations > 0 {
            v.push(format!("{} positive off-diagonal entries", self.offdiag_sign_violations));
        }
        if self.kernel_dimension != 1 {
            v.push(format!("kernel dimension {} (ground state not unique)", self.kernel_dimension));
        }
        v
    }

    pub fn passes(&self) -> bool {
        self.violations().is_empty()
    }
}

pub fn validate_generator(a: &DMatrix<f64>) -> Result<GeneratorReport> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    let m = a.nrows();
    if m == 0 {
        return Err(Error::InvalidGenerator("empty generator".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGenerator("non-finite entry".into()));
    }
    let norm = max_abs(a);
    let symmetry_residual = max_abs(&(a - a.transpose()));
    let row_sum_residual = a.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    let offdiag_sign_violations =
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| i != j && a[(i, j)] > 0.0).count();
    let sym = (a + a.transpose()) * 0.5;
    let (values, vectors) = sym_eigen(&sym);
    let min_eigenvalue = values[0];
    let tol = 1e-10 * norm;
    let kernel: Vec<usize> = (0..m).filter(|&i| values[i].abs() <= tol).collect();
    let mut limit = DMatrix::<f64>::zeros(m, m);
    for &i in &kernel {
        let v = vectors.column(i);
        limit += v * v.transpose();
    }
    Ok(GeneratorReport {
        size: m,
        norm,
        symmetry_residual,
        min_eigenvalue,
        row_sum_residual,
        offdiag_sign_violations,
        kernel_dimension: kernel.len(),
        limit_kernel: limit.row_iter().map(|r| r.iter().copied().collect()).collect(),
        finite_state_notes: vec![
            "semigroup maps L^1 into L^infinity: automatic for a finite state space".into(),
            "kernel is a finite sum of tensor products: automatic for a finite state space".into(),
        ],
    })
}

/// Positive zero-energy eigenvector of `A`, normalized so `Σ h = 1`.
pub fn ground_state(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let report = validate_generator(a)?;
    if report.kernel_dimension != 1 {
        return Err(Error::KernelDimension(report.kernel_dimension));
    }
    let (_, vectors) = sym_eigen(&((a + a.transpose()) * 0.5));
    let v = vectors.column(0).into_owned();
    let s = v.sum();
    let h = v / s;
    if h.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidGenerator("ground state is not strictly positive".into()));
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct HeatKernel {
    pub t: f64,
    /// `K[(y₁, y₂)] = P(X_t = y₁ | X_0 = y₂)`.
    pub matrix: DMatrix<f64>,
}

/// A validated generator together with its initial law and cached spectral data.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    generator: DMatrix<f64>,
    initial: InitialLaw,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    ground: DVector<f64>,
}

impl MarkovModel {
    pub fn new(generator: DMatrix<f64>, initial: InitialLaw) -> Result<Self> {
        let report = validate_generator(&generator)?;
        let issues = report.violations();
        if !issues.is_empty() {
            return Err(Error::InvalidGenerator(issues.join("; ")));
        }
        let m = generator.nrows();
        match &initial {
            InitialLaw::Dirac(y) if *y >= m => {
                return Err(Error::InvalidArgument(format!("Dirac state {y} out of range for {m} states")))
            }
            InitialLaw::Distribution(p)
                if p.len() != m || p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 =>
            {
                return Err(Error::InvalidArgument(format!("initial law must be a probability vector of length {m}")));
            }
            _ => {}
        }
        let ground = ground_state(&generator)?;
        let (eigenvalues, eigenvectors) = sym_eigen(&generator);
        Ok(Self { generator, initial, eigenvalues, eigenvectors, ground })
    }

    pub fn from_rows(rows: &[Vec<f64>], initial: InitialLaw) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            return Err(Error::NonSquare { rows: m, cols });
        }
        let a = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        Self::new(a, initial)
    }

    /// Symmetric two-state chain `A = [[a, −a], [−a, a]]`, uniform start.
    pub fn two_state(rate: f64) -> Result<Self> {
        Self::from_rows(&[vec![rate, -rate], vec![-rate, rate]], InitialLaw::uniform(2))
    }

    /// Complete graph on `m` states with uniform edge rate, uniform start.
    pub fn complete_graph(m: usize, rate: f64) -> Result<Self> {
        let a = DMatrix::from_fn(m, m, |i, j| if i == j { rate * (m as f64 - 1.0) } else { -rate });
        Self::new(a, InitialLaw::uniform(m))
    }

    /// The single-state model `A = 0`.
    pub fn trivial() -> Self {
        Self::new(DMatrix::zeros(1, 1), InitialLaw::Dirac(0)).expect("1x1 zero generator is valid")
    }

    pub fn states(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    pub fn with_initial_law(mut self, initial: InitialLaw) -> Result<Self> {
        let m = self.states();
        self = Self::new(std::mem::replace(&mut self.generator, DMatrix::zeros(0, 0)), initial)?;
        debug_assert_eq!(self.states(), m);
        Ok(self)
    }

    pub fn ground_state(&self) -> &DVector<f64> {
        &self.ground
    }

    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn heat_kernel(&self, t: f64) -> Result<HeatKernel> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("heat kernel time must be >= 0, got {t}")));
        }
        let matrix = if t == 0.0 {
            DMatrix::identity(self.states(), self.states())
        } else {
            sym_function(&self.eigenvalues, &self.eigenvectors, |l| (-t * l.max(0.0)).exp())
        };
        Ok(HeatKernel { t, matrix })
    }
}

/// `e^{−tA}` for a bare generator (validated only for symmetry of shape).
pub fn heat_kernel(a: &DMatrix<f64>, t: f64) -> Result<HeatKernel> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("heat kernel time must be >= 0, got {t}")));
    }
    let (values, vectors) = sym_eigen(&((a + a.transpose()) * 0.5));
    let matrix = if t == 0.0 {
        DMatrix::identity(a.nrows(), a.nrows())
    } else {
        sym_function(&values, &vectors, |l| (-t * l.max(0.0)).exp())
    };
    Ok(HeatKernel { t, matrix })
}

/// A right-continuous piecewise-constant path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    /// `states[k]` holds on `[jump_times[k−1], jump_times[k])`.
    pub states: Vec<usize>,
    pub seed: u64,
}

impl PathSample {
    /// A path that stays in `state` for all time.
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self { horizon, jump_times: Vec::new(), states: vec![state], seed: 0 }
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    /// Right-continuous evaluation: at a jump time the post-jump state is returned.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: self.horizon });
        }
        Ok(self.states[self.jump_times.partition_point(|&tau| tau <= t)])
    }

    /// Jump times in the open interval `(a, b)`.
    pub fn jumps_between(&self, a: f64, b: f64) -> &[f64] {
        let lo = self.jump_times.partition_point(|&tau| tau <= a);
        let hi = self.jump_times.partition_point(|&tau| tau < b);
        &self.jump_times[lo..hi.max(lo)]
    }

    /// Time spent in `state` during `[0, horizon]`.
    pub fn occupation_time(&self, state: usize) -> f64 {
        let mut edges = Vec::with_capacity(self.jump_times.len() + 2);
        edges.push(0.0);
        edges.extend_from_slice(&self.jump_times);
        edges.push(self.horizon);
        self.states.iter().enumerate().filter(|(_, &s)| s == state).map(|(k, _)| edges[k + 1] - edges[k]).sum()
    }

    /// A view that refuses to reveal the path beyond `until`.
    pub fn prefix(&self, until: f64) -> PathPrefix<'_> {
        PathPrefix { path: self, until }
    }
}

/// The path restricted to `[0, until]`; source callbacks receive this so they
/// can only depend on the history of the process.
#[derive(Debug, Clone, Copy)]
pub struct PathPrefix<'a> {
    path: &'a PathSample,
    until: f64,
}

impl PathPrefix<'_> {
    pub fn until(&self) -> f64 {
        self.until
    }

    pub fn state_at(&self, t: f64) -> Option<usize> {
        if t > self.until {
            return None;
        }
        self.path.state_at(t).ok()
    }

    pub fn jump_times(&self) -> &[f64] {
        let hi = self.path.jump_times.partition_point(|&tau| tau <= self.until);
        &self.path.jump_times[..hi]
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of path `index` in an ensemble with `master` seed.
pub fn split_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Exact jump-chain sample of the chain on `[0, horizon]`.
pub fn sample_path(model: &MarkovModel, horizon: f64, seed: u64) -> Result<PathSample> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let a = model.generator();
    let m = model.states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let first: f64 = rng.random();
    let start = match model.initial_law() {
        InitialLaw::Dirac(y) => *y,
        InitialLaw::Distribution(p) => pick(p.iter().copied(), first * p.iter().sum::<f64>()).unwrap_or(m - 1),
    };

    let mut states = vec![start];
    let mut jump_times = Vec::new();
    let mut t = 0.0;
    let mut y = start;
    loop {
        let rate = a[(y, y)];
        let off: f64 = (0..m).filter(|&j| j != y).map(|j| -a[(y, j)]).sum();
        if rate <= 0.0 {
            if off > 0.0 {
                return Err(Error::InvalidGenerator(format!(
                    "state {y} has zero holding rate but off-diagonal mass {off}"
                )));
            }
            break;
        }
        let hold: f64 = Exp1.sample(&mut rng);
        t += hold / rate;
        if t >= horizon {
            break;
        }
        let u: f64 = rng.random::<f64>() * off;
        let weights = (0..m).map(|j| if j == y { 0.0 } else { -a[(y, j)] });
        let next = pick(weights, u).unwrap_or_else(|| (0..m).rev().find(|&j| j != y && a[(y, j)] < 0.0).unwrap_or(y));
        if next == y {
            break;
        }
        jump_times.push(t);
        states.push(next);
        y = next;
    }
    Ok(PathSample { horizon, jump_times, states, seed })
}

/// Index of the bin containing `u` under cumulative `weights`.
fn pick(weights: impl Iterator<Item = f64>, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last_positive
}
