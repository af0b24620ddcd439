//! Discrete Lebesgue, Lorentz and sum/intersection norms.
//!
//! The `*_weighted` variants act on magnitudes with a uniform cell measure,
//! which is how real fields (potentials, densities) are measured.

use std::collections::BTreeMap;

use super::{SpatialGrid, WaveField};
use crate::{Error, Result};

fn magnitudes(field: &WaveField) -> Vec<f64> {
    field.values().iter().map(|v| v.norm()).collect()
}

fn sorted_desc(mags: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = mags.iter().map(|m| m.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    a
}

pub fn lebesgue_norm_weighted(mags: &[f64], cell: f64, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(format!("Lebesgue exponent must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(mags.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    // Scale by the maximum to avoid overflow for large p.
    let max = mags.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if max == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = mags.iter().map(|v| (v.abs() / max).powf(p)).sum();
    Ok(max * (s * cell).powf(1.0 / p))
}

pub fn lebesgue_norm(field: &WaveField, p: f64) -> Result<f64> {
    lebesgue_norm_weighted(&magnitudes(field), field.grid().cell_volume(), p)
}

/// Lorentz `L^{p,q}` norm, evaluated exactly on the piecewise-constant
/// decreasing rearrangement.
///
/// With `a_1 ≥ a_2 ≥ …` the sorted magnitudes and `w` the cell measure,
///
/// ```text
/// ‖f‖_{p,q}^q = Σ_i a_i^q (p/q) [(i w)^{q/p} − ((i−1) w)^{q/p}],
/// ‖f‖_{p,∞}   = max_i a_i (i w)^{1/p}.
/// ```
///
/// `q = ∞` accepts any `p > 0` (weak-type quasinorms are needed for `L^{d/2,∞}`
/// in low dimension); finite `q` needs `q ≥ 1`.
pub fn lorentz_norm_weighted(mags: &[f64], cell: f64, p: f64, q: f64) -> Result<f64> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidExponent(format!("Lorentz p must be finite and > 0, got {p}")));
    }
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidExponent(format!("Lorentz q must be >= 1, got {q}")));
    }
    let a = sorted_desc(mags);
    if q.is_infinite() {
        return Ok(a.iter().enumerate().map(|(i, &v)| v * ((i + 1) as f64 * cell).powf(1.0 / p)).fold(0.0, f64::max));
    }
    let max = a.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0.0);
    }
    let r = q / p;
    let mut s = 0.0;
    for (idx, &v) in a.iter().enumerate() {
        if v == 0.0 {
            break;
        }
        let i = (idx + 1) as f64;
        // (i w)^r − ((i−1) w)^r without cancellation.
        let weight = (i * cell).powf(r) * -((r * (-1.0 / i).ln_1p()).exp_m1());
        s += (v / max).powf(q) * weight;
    }
    Ok(max * (s / r).powf(1.0 / q))
}

pub fn lorentz_norm(field: &WaveField, p: f64, q: f64) -> Result<f64> {
    lorentz_norm_weighted(&magnitudes(field), field.grid().cell_volume(), p, q)
}

/// Computable surrogate for the `L² + L^∞` norm:
/// `min_λ ‖f·1_{|f|>λ}‖₂ + λ` over `λ ∈ {0} ∪ {|f_i|}`.
///
/// The splitting `f = f·1_{|f|>λ} + f·1_{|f|≤λ}` shows it dominates the
/// infimal norm, and it is bounded by twice that norm.
pub fn sum_norm_weighted(mags: &[f64], cell: f64) -> f64 {
    let a = sorted_desc(mags);
    let total: f64 = a.iter().map(|v| v * v).sum();
    let mut best = (cell * total).sqrt();
    // `above` holds Σ a_i² over entries strictly greater than the candidate.
    let mut above = 0.0;
    let mut i = 0;
    while i < a.len() {
        let lambda = a[i];
        best = best.min((cell * above).sqrt() + lambda);
        let mut j = i;
        while j < a.len() && a[j] == lambda {
            above += a[j] * a[j];
            j += 1;
        }
        i = j;
    }
    best
}

pub fn sum_norm(field: &WaveField) -> f64 {
    sum_norm_weighted(&magnitudes(field), field.grid().cell_volume())
}

/// `‖f‖_{L¹∩L²} = max(‖f‖₁, ‖f‖₂)`.
pub fn intersection_norm(field: &WaveField) -> f64 {
    let w = field.grid().cell_volume();
    let l1: f64 = field.values().iter().map(|v| v.norm()).sum::<f64>() * w;
    let l2 = field.l2_norm();
    l1.max(l2)
}

/// `Σ_n sup_y ‖1_{|v|∈[2^n,2^{n+1})} v‖_{L^d}` over a finite family of real
/// fields (one per state). Empty shells contribute nothing.
pub fn dyadic_shell_norm(grid: &SpatialGrid, states: &[Vec<f64>], d: usize) -> f64 {
    let w = grid.cell_volume();
    let p = d.max(1) as f64;
    let mut shells: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (y, field) in states.iter().enumerate() {
        for &v in field {
            let a = v.abs();
            if a == 0.0 || !a.is_finite() {
                continue;
            }
            let entry = shells.entry(dyadic_exponent(a)).or_insert_with(|| vec![0.0; states.len()]);
            entry[y] += a.powf(p) * w;
        }
    }
    shells.values().map(|per_state| per_state.iter().fold(0.0, |m: f64, &s| m.max(s.powf(1.0 / p)))).sum()
}

/// `floor(log2 a)` for positive finite `a`, exact for normal numbers.
fn dyadic_exponent(a: f64) -> i32 {
    let bits = a.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        a.log2().floor() as i32
    } else {
        exp - 1023
    }
}
