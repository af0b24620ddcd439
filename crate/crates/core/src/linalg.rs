//! Thin helpers over nalgebra used by several modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Real symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    let m = a.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `f(A)` for symmetric `A` from a precomputed eigendecomposition.
pub fn sym_function(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let m = values.len();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(m, values.iter().map(|&v| f(v))));
    vectors * d * vectors.transpose()
}

/// Max-abs entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_c(a: &DMatrix<Complex64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.norm()))
}

/// Induced ∞-norm (max absolute row sum).
pub fn inf_norm_c(a: &DMatrix<Complex64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Eigenvectors of an upper-triangular matrix by back substitution.
///
/// Column `k` solves `(T − t_kk) x = 0` with `x_k = 1` and `x_j = 0` for
/// `j > k`. Near-equal diagonal entries are perturbed to keep the solve
/// finite, which is standard for Schur-based eigenvector recovery.
pub fn triangular_eigenvectors(t: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = t.nrows();
    let scale = max_abs_c(t).max(f64::MIN_POSITIVE);
    let small = scale * f64::EPSILON;
    let mut x = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        x[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * x[(j, k)];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < small {
                denom = Complex64::new(small, 0.0);
            }
            x[(i, k)] = -s / denom;
        }
        let norm = (0..=k).map(|i| x[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..=k {
            x[(i, k)] /= norm;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_eigenvectors_solve_the_eigenproblem() {
        let t = DMatrix::from_row_slice(
            3,
            3,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 1.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-1.0, 0.5),
                Complex64::new(3.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(2.0, -1.0),
            ],
        );
        let x = triangular_eigenvectors(&t);
        for k in 0..3 {
            let v = x.column(k).into_owned();
            let r = &t * &v - v.clone() * t[(k, k)];
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn sym_function_exponential_of_zero_is_identity() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let (v, q) = sym_eigen(&a);
        let e = sym_function(&v, &q, |x| (-x).exp());
        assert!((e - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
    }
}
