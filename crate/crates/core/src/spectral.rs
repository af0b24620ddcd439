//! The dissipative operator `H = −Δ ⊗ I + i I ⊗ A + V` on `L²(dx) ⊗ ℓ²(y)`
//! as a dense matrix, its spectrum, and the symmetric Kato–Birman operator
//! `KB(λ) = I + v₂ R₀(λ) v₁` with `R₀(λ) = (−Δ ⊗ I + i I ⊗ A − λ)^{−1}`.
//!
//! Rows and columns are indexed by `x · m + y`. The Laplacian is the exact
//! spectral one, so eigenvalues agree with the propagator's kinetic symbol.

use nalgebra::{DMatrix, Schur, SVD};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{laplacian_symbol, Fourier, SpatialGrid};
use crate::linalg::{inf_norm_c, max_abs_c, triangular_eigenvectors};
use crate::markov::MarkovModel;
use crate::potential::{split, PotentialFamily};
use crate::{Error, Result};

/// Default cap on the matrix dimension `n^d · m`.
pub const DEFAULT_SIZE_CAP: usize = 4096;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    pub grid: SpatialGrid,
    pub states: usize,
    pub matrix: DMatrix<Complex64>,
}

impl DiscreteHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Induced `∞`-norm.
    pub fn norm(&self) -> f64 {
        inf_norm_c(&self.matrix)
    }
}

/// Dense matrix of the spectral `−Δ` on the grid (real symmetric).
pub fn laplacian_matrix(grid: &SpatialGrid) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let symbol = laplacian_symbol(grid);
    let mut fourier = Fourier::new(*grid);
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut col = vec![ZERO; n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = ZERO);
        col[j] = ONE;
        fourier.apply_real_multiplier(&mut col, &symbol)?;
        for (i, c) in col.iter().enumerate() {
            out[(i, j)] = c.re;
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

fn check_sizes(family: &PotentialFamily, model: &MarkovModel, cap: usize) -> Result<(SpatialGrid, usize, usize)> {
    let m = model.states();
    if family.states() != m {
        return Err(Error::LengthMismatch { expected: m, actual: family.states() });
    }
    let grid = *family.grid();
    let dim = grid.len() * m;
    if dim > cap {
        return Err(Error::SizeCap(format!("operator dimension {dim} exceeds the cap {cap}")));
    }
    Ok((grid, m, dim))
}

/// `−Δ ⊗ I + i I ⊗ A`.
fn free_part(grid: &SpatialGrid, model: &MarkovModel) -> Result<DMatrix<Complex64>> {
    let lap = laplacian_matrix(grid)?;
    let a = model.generator();
    let m = model.states();
    let n = grid.len();
    Ok(DMatrix::from_fn(n * m, n * m, |r, c| {
        let (x1, y1) = (r / m, r % m);
        let (x2, y2) = (c / m, c % m);
        let mut v = ZERO;
        if y1 == y2 {
            v.re += lap[(x1, x2)];
        }
        if x1 == x2 {
            v.im += a[(y1, y2)];
        }
        v
    }))
}

fn potential_diagonal(family: &PotentialFamily) -> Vec<f64> {
    let m = family.states();
    (0..family.grid().len() * m).map(|i| family.state(i % m)[i / m]).collect()
}

pub fn assemble_h(family: &PotentialFamily, model: &MarkovModel) -> Result<DiscreteHamiltonian> {
    assemble_h_capped(family, model, DEFAULT_SIZE_CAP)
}

pub fn assemble_h_capped(family: &PotentialFamily, model: &MarkovModel, cap: usize) -> Result<DiscreteHamiltonian> {
    let (grid, m, _) = check_sizes(family, model, cap)?;
    let mut matrix = free_part(&grid, model)?;
    for (i, v) in potential_diagonal(family).into_iter().enumerate() {
        matrix[(i, i)].re += v;
    }
    Ok(DiscreteHamiltonian { grid, states: m, matrix })
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenAnalysis {
    pub eigenvalues: Vec<Complex64>,
    /// Fraction of each eigenvector's mass inside the window.
    pub localization: Vec<f64>,
    pub min_imag: f64,
    pub norm: f64,
    /// Indices of eigenvalues whose eigenvectors are more than half inside
    /// the window.
    pub localized: Vec<usize>,
    /// `min Im ≥ −1e−8 ‖H‖`.
    pub dissipative: bool,
}

impl EigenAnalysis {
    pub fn localized_eigenvalues(&self) -> Vec<Complex64> {
        self.localized.iter().map(|&i| self.eigenvalues[i]).collect()
    }
}

fn schur(matrix: DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    Schur::try_new(matrix, f64::EPSILON, 100_000)
        .map(|s| s.unpack())
        .ok_or_else(|| Error::Eigen("complex Schur iteration did not converge".into()))
}

/// Eigenvalues only.
pub fn eigenvalues(h: &DiscreteHamiltonian) -> Result<Vec<Complex64>> {
    let (_, t) = schur(h.matrix.clone())?;
    Ok(t.diagonal().iter().copied().collect())
}

/// Dense nonsymmetric eigensolve with eigenvector localization in the
/// cells accepted by `window`.
pub fn eigen_analysis(h: &DiscreteHamiltonian, window: impl Fn(&[f64]) -> bool) -> Result<EigenAnalysis> {
    let (q, t) = schur(h.matrix.clone())?;
    let eigenvalues: Vec<Complex64> = t.diagonal().iter().copied().collect();
    let vectors = q * triangular_eigenvectors(&t);
    let m = h.states;
    let inside: Vec<bool> = (0..h.grid.len()).map(|x| window(&h.grid.position(x))).collect();
    let localization = (0..vectors.ncols())
        .map(|k| {
            let col = vectors.column(k);
            let total: f64 = col.iter().map(|c| c.norm_sqr()).sum();
            let within: f64 = col.iter().enumerate().filter(|(i, _)| inside[i / m]).map(|(_, c)| c.norm_sqr()).sum();
            if total > 0.0 {
                within / total
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>();
    let norm = h.norm();
    let min_imag = eigenvalues.iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
    let localized = (0..eigenvalues.len()).filter(|&k| localization[k] > 0.5).collect();
    Ok(EigenAnalysis { eigenvalues, localization, min_imag, norm, localized, dissipative: min_imag >= -1e-8 * norm })
}

#[derive(Debug, Clone)]
pub struct KbOperator {
    pub lambda: Complex64,
    /// Point actually used. Differs from `lambda` only when `lambda` sits on
    /// an eigenvalue of the free operator, where the limit from below is
    /// taken instead.
    pub evaluated_at: Complex64,
    pub matrix: DMatrix<Complex64>,
}

/// Downward shift used at eigenvalues of the free operator.
pub const THRESHOLD_SHIFT: f64 = 1e-9;

fn check_lambda(lambda: Complex64) -> Result<()> {
    if !(lambda.re.is_finite() && lambda.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("spectral parameter {lambda} is not finite")));
    }
    if lambda.im > 0.0 {
        return Err(Error::UpperHalfPlane(lambda));
    }
    Ok(())
}

/// Precomputed pieces shared by every `λ`.
#[derive(Debug, Clone)]
pub struct KbSetup {
    free: DMatrix<Complex64>,
    free_spectrum: Vec<Complex64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    potential: Vec<f64>,
}

impl KbSetup {
    pub fn new(family: &PotentialFamily, model: &MarkovModel) -> Result<Self> {
        let (grid, m, _) = check_sizes(family, model, DEFAULT_SIZE_CAP)?;
        let w = split(family);
        let flatten = |f: &[Vec<f64>]| (0..grid.len() * m).map(|i| f[i % m][i / m]).collect::<Vec<f64>>();
        let mut free_spectrum = Vec::with_capacity(grid.len() * m);
        for &k2 in &laplacian_symbol(&grid) {
            free_spectrum.extend(model.spectrum().iter().map(|&mu| Complex64::new(k2, mu)));
        }
        Ok(Self {
            free: free_part(&grid, model)?,
            free_spectrum,
            v1: flatten(&w.v1),
            v2: flatten(&w.v2),
            potential: potential_diagonal(family),
        })
    }

    fn solve(&self, op: DMatrix<Complex64>, rhs: DMatrix<Complex64>, what: &str) -> Result<DMatrix<Complex64>> {
        let lu = op.lu();
        lu.solve(&rhs).ok_or_else(|| Error::Singular(format!("{what} is singular")))
    }

    fn shifted(&self, lambda: Complex64, with_potential: bool) -> DMatrix<Complex64> {
        let mut op = self.free.clone();
        for i in 0..op.nrows() {
            op[(i, i)] -= lambda;
            if with_potential {
                op[(i, i)].re += self.potential[i];
            }
        }
        op
    }

    /// `v₂ R v₁` with `R` the free (`with_potential = false`) or full resolvent.
    fn sandwich(&self, lambda: Complex64, with_potential: bool) -> Result<DMatrix<Complex64>> {
        let n = self.v1.len();
        let rhs = DMatrix::from_fn(n, n, |i, j| if i == j { Complex64::new(self.v1[i], 0.0) } else { ZERO });
        let what = if with_potential { "H − λ" } else { "H₀ − λ" };
        let mut r = self.solve(self.shifted(lambda, with_potential), rhs, what)?;
        for (i, &v) in self.v2.iter().enumerate() {
            r.row_mut(i).scale_mut(v);
        }
        Ok(r)
    }

    /// `λ`, or `λ − i·THRESHOLD_SHIFT` if `λ` is an eigenvalue of the free
    /// operator (on a periodic box `λ = 0` always is).
    pub fn regularize(&self, lambda: Complex64) -> Complex64 {
        let tol = 1e-10 * (1.0 + lambda.norm());
        if self.free_spectrum.iter().any(|z| (z - lambda).norm() <= tol) {
            lambda - Complex64::new(0.0, THRESHOLD_SHIFT)
        } else {
            lambda
        }
    }

    pub fn kb(&self, lambda: Complex64) -> Result<KbOperator> {
        check_lambda(lambda)?;
        let evaluated_at = self.regularize(lambda);
        let mut matrix = self.sandwich(evaluated_at, false)?;
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += ONE;
        }
        if matrix.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite { t: 0.0, what: format!("KB({lambda})") });
        }
        Ok(KbOperator { lambda, evaluated_at, matrix })
    }

    /// `I − v₂ R_V v₁`, the claimed inverse of `KB(λ)`.
    pub fn kb_inverse_candidate(&self, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        check_lambda(lambda)?;
        let mut out = -self.sandwich(self.regularize(lambda), true)?;
        for i in 0..out.nrows() {
            out[(i, i)] += ONE;
        }
        Ok(out)
    }
}

pub fn assemble_kb(family: &PotentialFamily, model: &MarkovModel, lambda: Complex64) -> Result<KbOperator> {
    KbSetup::new(family, model)?.kb(lambda)
}

pub fn min_singular_value(a: &DMatrix<Complex64>) -> f64 {
    SVD::new(a.clone(), false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanPoint {
    pub lambda: Complex64,
    pub min_singular_value: f64,
    /// Evaluated as the limit from below (see [`KbSetup::regularize`]).
    pub regularized: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KbScan {
    pub points: Vec<ScanPoint>,
    pub global_min: f64,
    pub argmin: Complex64,
}

/// Default `λ` grid: real parts `−10, −9, …, 10` times imaginary parts
/// `0, −1, …, −5`.
pub fn default_lambda_grid() -> Vec<Complex64> {
    lambda_grid((-10.0, 10.0), 21, (-5.0, 0.0), 6)
}

/// `re_count × im_count` equally spaced points, both ends included.
pub fn lambda_grid(re: (f64, f64), re_count: usize, im: (f64, f64), im_count: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(re_count * im_count);
    for j in 0..im_count {
        let b = if im_count == 1 { im.1 } else { im.1 - (im.1 - im.0) * j as f64 / (im_count - 1) as f64 };
        for i in 0..re_count {
            let a = if re_count == 1 { re.0 } else { re.0 + (re.1 - re.0) * i as f64 / (re_count - 1) as f64 };
            out.push(Complex64::new(a, b));
        }
    }
    out
}

/// Smallest singular value of `KB(λ)` at each grid point, in parallel.
pub fn kb_scan(family: &PotentialFamily, model: &MarkovModel, lambdas: &[Complex64]) -> Result<KbScan> {
    let setup = KbSetup::new(family, model)?;
    let points: Vec<ScanPoint> = lambdas
        .par_iter()
        .map(|&lambda| {
            let kb = setup.kb(lambda)?;
            Ok(ScanPoint {
                lambda,
                min_singular_value: min_singular_value(&kb.matrix),
                regularized: kb.evaluated_at != lambda,
            })
        })
        .collect::<Result<_>>()?;
    let best = points
        .iter()
        .min_by(|a, b| a.min_singular_value.total_cmp(&b.min_singular_value))
        .ok_or_else(|| Error::InvalidArgument("empty λ grid".into()))?;
    Ok(KbScan { global_min: best.min_singular_value, argmin: best.lambda, points })
}

/// `‖(I + v₂R₀v₁)(I − v₂R_Vv₁) − I‖_max`.
pub fn resolvent_identity_residual(family: &PotentialFamily, model: &MarkovModel, lambda: Complex64) -> Result<f64> {
    let setup = KbSetup::new(family, model)?;
    let kb = setup.kb(lambda)?.matrix;
    let mut prod = kb * setup.kb_inverse_candidate(lambda)?;
    for i in 0..prod.nrows() {
        prod[(i, i)] -= ONE;
    }
    Ok(max_abs_c(&prod))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::markov::InitialLaw;
    use crate::potential::{make_amplitude_family, Shape, ShapeParams};

    fn pt_family(grid: SpatialGrid, amplitudes: &[f64]) -> PotentialFamily {
        let well = ShapeParams::new(Shape::Sech2, -2.0, 1.0).sample(&grid);
        make_amplitude_family(grid, &well, &well, amplitudes).unwrap()
    }

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn free_spectrum_is_the_symbol() {
        let grid = SpatialGrid::new(1, 16, 8.0).unwrap();
        let h = assemble_h(&PotentialFamily::zero(grid, 1), &MarkovModel::trivial()).unwrap();
        let ev = sorted(eigenvalues(&h).unwrap());
        let mut sym = laplacian_symbol(&grid);
        sym.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&sym) {
            assert!((a.re - b).abs() <= 1e-10 * sym[15] && a.im.abs() <= 1e-10);
        }
        // Each nonzero, non-Nyquist |k|² appears twice.
        assert_eq!(sym.iter().filter(|&&s| (s - sym[1]).abs() < 1e-12).count(), 2);
    }

    #[test]
    fn free_spectrum_with_mixing_is_a_sum() {
        let grid = SpatialGrid::new(1, 8, 6.0).unwrap();
        let model = MarkovModel::from_rows(
            &[vec![1.0, -1.0, 0.0], vec![-1.0, 3.0, -2.0], vec![0.0, -2.0, 2.0]],
            InitialLaw::uniform(3),
        )
        .unwrap();
        let h = assemble_h(&PotentialFamily::zero(grid, 3), &model).unwrap();
        let mut ev = eigenvalues(&h).unwrap();
        for &k2 in &laplacian_symbol(&grid) {
            for &mu in model.spectrum().iter() {
                let z = Complex64::new(k2, mu);
                let (i, d) =
                    ev.iter().enumerate().map(|(i, e)| (i, (e - z).norm())).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
                assert!(d <= 1e-9, "{z} missing");
                ev.swap_remove(i);
            }
        }
        assert!(ev.is_empty());
    }

    #[test]
    fn poschl_teller_level() {
        let level = |n: usize| {
            let grid = SpatialGrid::new(1, n, 30.0).unwrap();
            let h = assemble_h(&pt_family(grid, &[0.0]), &MarkovModel::trivial()).unwrap();
            let a = eigen_analysis(&h, |x| x[0].abs() <= 3.0).unwrap();
            assert!(a.eigenvalues.iter().all(|z| z.im.abs() <= 1e-10));
            let loc = a.localized_eigenvalues();
            assert_eq!(loc.len(), 1, "{loc:?}");
            loc[0].re
        };
        let (coarse, fine) = (level(128), level(256));
        assert!((fine + 1.0).abs() <= 1e-6, "{fine}");
        assert!((coarse - fine).abs() <= 1e-6);
    }

    #[test]
    fn resonance_needs_nontrivial_randomness() {
        let grid = SpatialGrid::new(1, 64, 24.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        let window = |x: &[f64]| x[0].abs() <= 3.0;

        let h = assemble_h(&pt_family(grid, &[0.0, 0.0]), &model).unwrap();
        let a = eigen_analysis(&h, window).unwrap();
        assert!(a.dissipative);
        let bound = a.localized_eigenvalues().into_iter().min_by(|x, y| x.im.total_cmp(&y.im)).unwrap();
        assert!((bound.re + 1.0).abs() < 1e-3 && bound.im.abs() <= 1e-8 * a.norm, "{bound}");

        let h = assemble_h(&pt_family(grid, &[-0.5, 0.5]), &model).unwrap();
        let a = eigen_analysis(&h, window).unwrap();
        assert!(a.dissipative);
        let loc = a.localized_eigenvalues();
        assert!(!loc.is_empty());
        assert!(loc.iter().all(|z| z.im >= 1e-6 * a.norm), "{loc:?}");
    }

    #[test]
    fn size_cap_is_enforced() {
        let grid = SpatialGrid::new(1, 64, 10.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        assert!(matches!(assemble_h_capped(&PotentialFamily::zero(grid, 2), &model, 100), Err(Error::SizeCap(_))));
    }

    #[test]
    fn kb_basics() {
        let grid = SpatialGrid::new(1, 32, 16.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        let kb = assemble_kb(&PotentialFamily::zero(grid, 2), &model, Complex64::new(1.0, -1.0)).unwrap();
        assert!((min_singular_value(&kb.matrix) - 1.0).abs() <= 1e-12);

        let fam = pt_family(grid, &[-0.5, 0.5]);
        let far = assemble_kb(&fam, &model, Complex64::new(0.0, -1e4)).unwrap();
        let mut d = far.matrix.clone();
        for i in 0..d.nrows() {
            d[(i, i)] -= ONE;
        }
        assert!(max_abs_c(&d) <= 1e-2);
        assert!(matches!(assemble_kb(&fam, &model, Complex64::new(0.0, 0.5)), Err(Error::UpperHalfPlane(_))));
    }

    #[test]
    fn kb_inverse_and_resolvent_identity() {
        let grid = SpatialGrid::new(1, 32, 16.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        let fam = pt_family(grid, &[-0.5, 0.5]);
        assert!(
            resolvent_identity_residual(&PotentialFamily::zero(grid, 2), &model, Complex64::new(-1.0, -1.0)).unwrap()
                <= 1e-14
        );
        for lambda in [Complex64::new(-1.0, -1.0), Complex64::new(3.0, -0.5)] {
            assert!(resolvent_identity_residual(&fam, &model, lambda).unwrap() <= 1e-8);
        }
        assert!(resolvent_identity_residual(&fam, &model, Complex64::new(10.0, 0.0)).unwrap() <= 1e-6);

        let setup = KbSetup::new(&fam, &model).unwrap();
        let lambda = Complex64::new(0.7, -0.3);
        let inv = setup.kb(lambda).unwrap().matrix.try_inverse().unwrap();
        let cand = setup.kb_inverse_candidate(lambda).unwrap();
        assert!(max_abs_c(&(inv - cand)) <= 1e-6);
    }

    #[test]
    fn scan_reports_the_minimum() {
        let grid = SpatialGrid::new(1, 16, 12.0).unwrap();
        let model = MarkovModel::two_state(1.0).unwrap();
        let grid_l = default_lambda_grid();
        assert_eq!(grid_l.len(), 126);
        assert!(grid_l.iter().all(|z| z.im <= 0.0 && z.re.abs() <= 10.0));
        assert!(grid_l.contains(&Complex64::new(-10.0, -5.0)) && grid_l.contains(&Complex64::new(10.0, 0.0)));
        let scan = kb_scan(&pt_family(grid, &[-0.5, 0.5]), &model, &grid_l).unwrap();
        assert_eq!(scan.points.len(), 126);
        // Only the threshold λ = 0 needs the limit from below.
        let reg: Vec<_> = scan.points.iter().filter(|p| p.regularized).map(|p| p.lambda).collect();
        assert_eq!(reg, vec![Complex64::new(0.0, 0.0)]);
        assert!(scan.global_min > 0.0);
        assert!(scan.points.iter().all(|p| p.min_singular_value >= scan.global_min));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn spectrum_stays_in_the_closed_upper_half_plane(
            rates in proptest::collection::vec(0.01f64..5.0, 3),
            values in proptest::collection::vec(-5.0f64..5.0, 24),
        ) {
            let grid = SpatialGrid::new(1, 8, 5.0).unwrap();
            let (a, b, c) = (rates[0], rates[1], rates[2]);
            let model = MarkovModel::from_rows(
                &[vec![a + c, -a, -c], vec![-a, a + b, -b], vec![-c, -b, b + c]],
                InitialLaw::uniform(3),
            ).unwrap();
            let states = (0..3).map(|y| values[y * 8..(y + 1) * 8].to_vec()).collect();
            let fam = PotentialFamily::new(grid, states).unwrap();
            let h = assemble_h(&fam, &model).unwrap();
            let min_im = eigenvalues(&h).unwrap().iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
            prop_assert!(min_im >= -1e-8 * h.norm());
        }
    }
}
