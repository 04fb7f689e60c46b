//! Multivariate Gaussian primitives.
//!
//! All density work goes through a lower-triangular Cholesky factor
//! `cov = L Lᵀ`; the log-determinant is `2 Σ log L_ii` and quadratic forms are
//! evaluated by forward substitution. No explicit inverse or determinant
//! expansion appears on the density path.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::numeric::LN_2PI;
use crate::rng::{Rng, Seed};

/// Absolute tolerance for the symmetry check on covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative pivot threshold: a pivot must exceed this times the largest
/// diagonal entry.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// Lower-triangular factor of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    /// Factorises `a`, reading only its lower triangle.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim(n, a.ncols())?;
        if n == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
        if !max_diag.is_finite() || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: max_diag,
            });
        }
        let threshold = PIVOT_REL_TOL * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut pivot = a[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > threshold) {
                return Err(Error::NotPositiveDefinite { index: j, pivot });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(CholeskyFactor { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = y.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves `A x = b` where `A = L Lᵀ`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `dᵀ A⁻¹ d`.
    pub fn quad_form_inv(&self, d: &DVector<f64>) -> f64 {
        self.solve_lower(d).norm_squared()
    }

    /// `A⁻¹`, symmetrised. Used off the density path (precisions, traces).
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        symmetrize(&inv)
    }

    /// `L v`.
    pub fn mul_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.l * v
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Mean and covariance of a multivariate Gaussian. The covariance is
/// validated (symmetric, positive definite) and factorised on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        check_dim(n, cov.nrows())?;
        check_dim(n, cov.ncols())?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean has non-finite entries"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let factor = CholeskyFactor::new(&cov)?;
        Ok(GaussianParams { mean, cov, factor })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        check_dim(n * n, cov_row_major.len())?;
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, cov_row_major),
        )
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
            .expect("identity covariance is valid")
    }

    pub fn diagonal(mean: DVector<f64>, variances: &DVector<f64>) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(variances))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn log_det_cov(&self) -> f64 {
        self.factor.log_det()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// Differential entropy `½ log det(2πe Σ)`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + 0.5 * self.log_det_cov()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let d = x - &self.mean;
        Ok(-0.5 * self.dim() as f64 * LN_2PI
            - 0.5 * self.log_det_cov()
            - 0.5 * self.factor.quad_form_inv(&d))
    }

    /// One draw `μ + L ε` consuming `dim` standard normals from `rng`.
    pub fn sample_with(&self, rng: &mut Rng) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| rng.standard_normal());
        &self.mean + self.factor.mul_lower(&eps)
    }
}

pub fn log_density(x: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    g.log_density(x)
}

/// `count` draws from `g`, deterministic in `seed`.
pub fn sample_gaussian(g: &GaussianParams, count: usize, seed: Seed) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = Rng::new(seed);
    Ok((0..count).map(|_| g.sample_with(&mut rng)).collect())
}

/// Points `μ + L [cos θ, sin θ]ᵀ` for `θ = 2πi/n`, `i = 0..n`.
pub fn sigma_ellipse(g: &GaussianParams, n_points: usize) -> Result<Vec<[f64; 2]>> {
    check_dim(2, g.dim())?;
    if n_points < 3 {
        return Err(Error::invalid("an ellipse needs at least 3 points"));
    }
    let l = g.factor.lower();
    let mu = g.mean();
    Ok((0..n_points)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n_points as f64;
            let (s, c) = theta.sin_cos();
            [
                mu[0] + l[(0, 0)] * c,
                mu[1] + l[(1, 0)] * c + l[(1, 1)] * s,
            ]
        })
        .collect())
}
