//! Reference computations that avoid the library's factorization path:
//! Gauss–Jordan elimination for inverses and determinants, densities in
//! linear space, and plain sums.

#![allow(dead_code)]

use mixlab_core::rng::{Rng, Seed};
use mixlab_core::{DMatrix, DVector, GaussianParams};

/// Inverse and determinant by Gauss–Jordan with partial pivoting.
pub fn gauss_jordan(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        if pivot_row != col {
            m.swap_rows(pivot_row, col);
            inv.swap_rows(pivot_row, col);
            det = -det;
        }
        let p = m[(col, col)];
        det *= p;
        for j in 0..n {
            m[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[(i, col)];
                for j in 0..n {
                    m[(i, j)] -= f * m[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    (inv, det)
}

/// Gaussian density (not log) through the explicit inverse and determinant.
pub fn density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let (inv, det) = gauss_jordan(cov);
    let d = x - mean;
    let q = (d.transpose() * inv * &d)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(n) * det).sqrt()
}

pub fn log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let (inv, det) = gauss_jordan(cov);
    let d = x - mean;
    let q = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
}

/// `B Bᵀ + shift·I` with entries of `B` uniform on `[−1, 1]`.
pub fn random_spd(rng: &mut Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| 2.0 * rng.uniform() - 1.0);
    let a = &b * b.transpose() + DMatrix::identity(n, n) * shift;
    (&a + a.transpose()) * 0.5
}

pub fn random_vector(rng: &mut Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * (2.0 * rng.uniform() - 1.0))
}

pub fn random_gaussian(rng: &mut Rng, n: usize) -> GaussianParams {
    let mean = random_vector(rng, n, 2.0);
    let cov = random_spd(rng, n, 0.3);
    GaussianParams::new(mean, cov).unwrap()
}

pub fn rng(seed: u64) -> Rng {
    Rng::new(Seed(seed))
}

/// `max |a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
