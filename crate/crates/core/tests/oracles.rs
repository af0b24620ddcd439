//! Cross-module checks against independent closed forms and refinement studies.

use nalgebra::DMatrix;
use rnls::diagnostics::{energy_breakdown, strichartz_norm};
use rnls::grid::{SpatialGrid, WaveField};
use rnls::markov::{heat_kernel, sample_path, MarkovModel, PathSample};
use rnls::potential::{make_amplitude_family, make_translate_family, HartreeKernel, PotentialFamily};
use rnls::propagator::{evolve_path, SolverConfig, SplitOrder};
use rnls::spectral::resolvent_identity_residual;
use rnls::Complex64;

fn packet(grid: SpatialGrid, sigma: f64, momentum: f64) -> WaveField {
    WaveField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Complex64::from_polar((-r2 / (2.0 * sigma * sigma)).exp(), momentum * x[0])
    })
    .normalized()
}

fn bump(grid: &SpatialGrid, depth: f64) -> Vec<f64> {
    grid.sample(|x| depth * (-x.iter().map(|v| v * v).sum::<f64>()).exp())
}

#[test]
fn heat_kernel_converges_to_the_ground_projection() {
    for a in [0.3, 1.0, 7.5] {
        let gen = DMatrix::from_row_slice(2, 2, &[a, -a, -a, a]);
        let k = heat_kernel(&gen, 1e3 / a).unwrap();
        for v in k.matrix.iter() {
            assert!((v - 0.5).abs() <= 1e-10, "a = {a}: {v}");
        }
        // closed form at a finite time
        let t = 0.4;
        let k = heat_kernel(&gen, t).unwrap().matrix;
        let e = (-2.0 * a * t).exp();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 + e, 1.0 - e, 1.0 - e, 1.0 + e]) * 0.5;
        assert!((k - expect).amax() <= 1e-13);
    }
}

#[test]
fn opposite_shifts_of_a_symmetric_bump_are_mirror_images() {
    let grid = SpatialGrid::new(1, 64, 16.0).unwrap();
    let base = grid.sample(|x| (-(x[0] * x[0])).exp());
    let fam = make_translate_family(grid, &base, &[vec![5], vec![-5]]).unwrap();
    for (j, &b) in base.iter().enumerate() {
        assert_eq!(fam.state(0)[j], fam.state(1)[grid.reflect(j)]);
        // direct array shift
        assert_eq!(fam.state(0)[(j + 5) % 64], b);
    }
}

#[test]
fn static_potential_conserves_energy_along_the_path() {
    let grid = SpatialGrid::new(1, 256, 40.0).unwrap();
    let fam = PotentialFamily::uniform(grid, &bump(&grid, -2.0), 1).unwrap();
    let kernel = HartreeKernel::none(grid);
    let path = PathSample::constant(0, 2.0);
    let psi0 = packet(grid, 1.0, 1.0);
    // Strang conserves a nearby modified energy; the true energy wobbles at
    // O(dt²), so take dt small enough for the stated tolerance.
    let cfg = SolverConfig::uniform(1e-4, SplitOrder::Strang, 2.0, 2000).unwrap();
    let out = evolve_path(&psi0, &fam, &path, &kernel, &cfg).unwrap();
    let e0 = out.scalars[0].energy.total;
    for s in &out.scalars {
        assert!((s.energy.total - e0).abs() <= 1e-8, "t = {}: {:e}", s.t, s.energy.total - e0);
    }
    // and an independent recomputation of the final energy
    let last = energy_breakdown(out.last(), fam.state(0), &kernel, 2.0).unwrap();
    assert!((last.total - out.scalars.last().unwrap().energy.total).abs() <= 1e-14);
}

#[test]
fn free_energy_is_exactly_conserved() {
    let grid = SpatialGrid::new(1, 128, 30.0).unwrap();
    let fam = PotentialFamily::zero(grid, 1);
    let kernel = HartreeKernel::none(grid);
    let cfg = SolverConfig::uniform(0.05, SplitOrder::Strang, 5.0, 10).unwrap();
    let out = evolve_path(&packet(grid, 1.5, 2.0), &fam, &PathSample::constant(0, 5.0), &kernel, &cfg).unwrap();
    let k0 = out.scalars[0].energy.kinetic;
    for s in &out.scalars {
        assert!((s.energy.kinetic - k0).abs() <= 1e-12 * k0);
    }
}

#[test]
fn strichartz_ratio_is_stable_under_refinement() {
    // Free flow in three dimensions. Same box and data, twice the resolution.
    let ratio = |n: usize| {
        let grid = SpatialGrid::new(3, n, 16.0).unwrap();
        let fam = PotentialFamily::zero(grid, 1);
        let kernel = HartreeKernel::none(grid);
        let psi0 = packet(grid, 1.5, 0.0);
        let dt = 0.02;
        let cfg = SolverConfig::uniform(dt, SplitOrder::Strang, 1.0, 1).unwrap().without_scalars();
        let out = evolve_path(&psi0, &fam, &PathSample::constant(0, 1.0), &kernel, &cfg).unwrap();
        strichartz_norm(&out.snapshots, dt, 2.0, 6.0, 2.0).unwrap() / psi0.l2_norm()
    };
    let (coarse, fine) = (ratio(16), ratio(32));
    assert!(coarse > 0.0 && fine > 0.0);
    assert!((coarse / fine - 1.0).abs() <= 0.1, "coarse {coarse} fine {fine}");
}

#[test]
fn resolvent_identity_on_the_continuous_spectrum() {
    let grid = SpatialGrid::new(1, 64, 16.0).unwrap();
    let w = bump(&grid, 1.0);
    let fam = make_amplitude_family(grid, &bump(&grid, -1.0), &w, &[-0.3, 0.3]).unwrap();
    let model = MarkovModel::two_state(1.0).unwrap();
    for lambda in [Complex64::new(10.0, 0.0), Complex64::new(-1.0, -1.0), Complex64::new(3.0, -0.5)] {
        let r = resolvent_identity_residual(&fam, &model, lambda).unwrap();
        assert!(r <= 1e-6, "λ = {lambda}: {r:e}");
    }
}

#[test]
fn empirical_jump_rate_matches_the_generator() {
    // Each state of the symmetric two-state chain leaves at rate a.
    let a = 2.0;
    let model = MarkovModel::two_state(a).unwrap();
    let horizon = 50.0;
    let paths = 400;
    let jumps: usize = (0..paths).map(|s| sample_path(&model, horizon, s).unwrap().jump_times.len()).sum();
    let expected = a * horizon * paths as f64;
    let se = expected.sqrt();
    assert!((jumps as f64 - expected).abs() <= 4.0 * se, "{jumps} vs {expected}");
}
