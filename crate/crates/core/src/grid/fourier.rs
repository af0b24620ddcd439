use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{SpatialGrid, WaveField};
use crate::{Error, Result};

/// `|k|²` for every Fourier index, in the FFT's native frequency layout.
pub fn laplacian_symbol(grid: &SpatialGrid) -> Vec<f64> {
    let k2: Vec<f64> = (0..grid.n()).map(|j| grid.wavenumber(j).powi(2)).collect();
    (0..grid.len()).map(|flat| grid.multi_index(flat).into_iter().map(|j| k2[j]).sum()).collect()
}

/// `exp(i·t·s)` for each symbol entry `s`.
pub fn phase_multiplier(symbol: &[f64], t: f64) -> Vec<Complex64> {
    symbol.iter().map(|&s| Complex64::from_polar(1.0, t * s)).collect()
}

/// Unitary d-dimensional DFT on a grid.
///
/// Owns its scratch space, so one instance must not be shared between
/// concurrent evolutions; create one per worker instead.
pub struct Fourier {
    grid: SpatialGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    line: Vec<Complex64>,
    scale: f64,
}

impl Fourier {
    pub fn new(grid: SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n());
        let inverse = planner.plan_fft_inverse(grid.n());
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            grid,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            line: vec![Complex64::new(0.0, 0.0); grid.n()],
            scale: (grid.len() as f64).sqrt().recip(),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn forward_in_place(&mut self, data: &mut [Complex64]) -> Result<()> {
        self.run(data, false)
    }

    pub fn inverse_in_place(&mut self, data: &mut [Complex64]) -> Result<()> {
        self.run(data, true)
    }

    pub fn transform(&mut self, field: &WaveField) -> Result<Vec<Complex64>> {
        let mut out = field.values().to_vec();
        self.forward_in_place(&mut out)?;
        Ok(out)
    }

    pub fn inverse_transform(&mut self, spectrum: &[Complex64]) -> Result<WaveField> {
        let mut out = spectrum.to_vec();
        self.inverse_in_place(&mut out)?;
        WaveField::new(self.grid, out)
    }

    /// Applies the Fourier multiplier `mult` to `data` in place.
    pub fn apply_multiplier(&mut self, data: &mut [Complex64], mult: &[Complex64]) -> Result<()> {
        if mult.len() != data.len() {
            return Err(Error::LengthMismatch { expected: data.len(), actual: mult.len() });
        }
        self.forward_in_place(data)?;
        data.iter_mut().zip(mult).for_each(|(d, m)| *d *= m);
        self.inverse_in_place(data)
    }

    /// Applies a real Fourier multiplier `symbol` in place.
    pub fn apply_real_multiplier(&mut self, data: &mut [Complex64], symbol: &[f64]) -> Result<()> {
        if symbol.len() != data.len() {
            return Err(Error::LengthMismatch { expected: data.len(), actual: symbol.len() });
        }
        self.forward_in_place(data)?;
        data.iter_mut().zip(symbol).for_each(|(d, &m)| *d *= m);
        self.inverse_in_place(data)
    }

    fn run(&mut self, data: &mut [Complex64], inverse: bool) -> Result<()> {
        let total = self.grid.len();
        if data.len() != total {
            return Err(Error::LengthMismatch { expected: total, actual: data.len() });
        }
        let n = self.grid.n();
        let dim = self.grid.dim();
        let fft = if inverse { Arc::clone(&self.inverse) } else { Arc::clone(&self.forward) };

        // The last axis is contiguous: rustfft handles all lines in one call.
        fft.process_with_scratch(data, &mut self.scratch);

        for axis in 0..dim.saturating_sub(1) {
            let stride = n.pow((dim - 1 - axis) as u32);
            let outer = n.pow(axis as u32);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for j in 0..n {
                        self.line[j] = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for j in 0..n {
                        data[base + j * stride] = self.line[j];
                    }
                }
            }
        }
        let s = self.scale;
        data.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: SpatialGrid, seed: u64) -> WaveField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        WaveField::new(grid, v).unwrap()
    }

    #[test]
    fn zero_mode_symbol_is_zero() {
        let g = SpatialGrid::new(2, 8, 3.0).unwrap();
        assert_eq!(laplacian_symbol(&g)[0], 0.0);
    }

    #[test]
    fn symbol_enumerates_signed_frequencies() {
        let g = SpatialGrid::new(1, 4, 2.0 * std::f64::consts::PI).unwrap();
        let s = laplacian_symbol(&g);
        let expected = [0.0, 1.0, 4.0, 1.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn doubling_box_quarters_symbols() {
        let g1 = SpatialGrid::new(2, 8, 3.0).unwrap();
        let g2 = SpatialGrid::new(2, 8, 6.0).unwrap();
        for (a, b) in laplacian_symbol(&g1).iter().zip(laplacian_symbol(&g2)) {
            assert!((a / 4.0 - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn constant_field_concentrates_in_zero_mode() {
        let g = SpatialGrid::new(2, 8, 1.0).unwrap();
        let f = WaveField::from_fn(g, |_| Complex64::new(2.5, -1.0));
        let hat = Fourier::new(g).transform(&f).unwrap();
        for (k, v) in hat.iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "mode {k} = {v}");
        }
        assert!((hat[0] - Complex64::new(2.5, -1.0) * 8.0).norm() < 1e-12);
    }

    #[test]
    fn round_trip_and_parseval_in_each_dimension() {
        for dim in 1..=3 {
            let g = SpatialGrid::new(dim, 16, 5.0).unwrap();
            let f = random_field(g, dim as u64);
            let mut fourier = Fourier::new(g);
            let hat = fourier.transform(&f).unwrap();
            let back = fourier.inverse_transform(&hat).unwrap();
            let scale = f.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(f.max_abs_diff(&back) <= 1e-12 * scale);
            let e_x: f64 = f.values().iter().map(|v| v.norm_sqr()).sum();
            let e_k: f64 = hat.iter().map(|v| v.norm_sqr()).sum();
            assert!((e_x.sqrt() - e_k.sqrt()).abs() <= 1e-12 * e_x.sqrt());
        }
    }

    #[test]
    fn derivative_of_plane_wave() {
        // −Δ e^{ikx} = |k|² e^{ikx}
        let g = SpatialGrid::new(1, 32, 10.0).unwrap();
        let k = g.wavenumber(3);
        let f = WaveField::from_fn(g, |x| Complex64::from_polar(1.0, k * x[0]));
        let mut data = f.values().to_vec();
        let sym = laplacian_symbol(&g);
        Fourier::new(g).apply_real_multiplier(&mut data, &sym).unwrap();
        for (a, b) in data.iter().zip(f.values()) {
            assert!((a - b * k * k).norm() < 1e-10);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let g = SpatialGrid::new(1, 8, 1.0).unwrap();
        let mut bad = vec![Complex64::new(0.0, 0.0); 5];
        assert!(Fourier::new(g).forward_in_place(&mut bad).is_err());
    }
}
