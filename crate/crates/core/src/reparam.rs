//! Change of variables under invertible maps and Monte Carlo expectations
//! through them.
//!
//! A map's `forward` direction takes base noise `y` to the latent `z`; the
//! Jacobian term is `log |det ∂z/∂y|` evaluated at `y`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gauss::GaussianParams;
use crate::rng::{Rng, Seed};

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct InvertibleMap {
    dim: usize,
    forward: Arc<VecFn>,
    log_abs_det_jacobian: Arc<ScalarFn>,
}

impl fmt::Debug for InvertibleMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InvertibleMap").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl InvertibleMap {
    pub fn new<F, J>(dim: usize, forward: F, log_abs_det_jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        InvertibleMap {
            dim,
            forward: Arc::new(forward),
            log_abs_det_jacobian: Arc::new(log_abs_det_jacobian),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, |y| y.clone(), |_| 0.0)
    }

    /// `z = shift + matrix · y`. The log-determinant is computed once via LU;
    /// a singular matrix yields `-inf` and fails at evaluation time.
    pub fn affine(shift: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        let dim = shift.len();
        check_dim(dim, matrix.nrows())?;
        check_dim(dim, matrix.ncols())?;
        let det = matrix.clone().lu().determinant();
        let log_det = det.abs().ln();
        Ok(Self::new(dim, move |y| &shift + &matrix * y, move |_| log_det))
    }

    /// Elementwise `z = μ + σ ⊙ y`.
    pub fn diagonal_affine(mu: DVector<f64>, sigma: DVector<f64>) -> Result<Self> {
        check_dim(mu.len(), sigma.len())?;
        let log_det: f64 = sigma.iter().map(|s| s.abs().ln()).sum();
        Ok(Self::new(
            mu.len(),
            move |y| &mu + sigma.component_mul(y),
            move |_| log_det,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.forward)(y)
    }

    pub fn log_abs_det_jacobian(&self, y: &DVector<f64>) -> f64 {
        (self.log_abs_det_jacobian)(y)
    }
}

/// Monte Carlo mean with its standard error. With a single sample the
/// standard error is reported as `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// Mean and standard error (unbiased variance over `n - 1`) by Welford's
    /// recurrence. Empty input is rejected.
    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in samples {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        if n == 0 {
            return Err(Error::invalid("no samples"));
        }
        let std_error = if n == 1 {
            f64::INFINITY
        } else {
            (m2 / (n - 1) as f64 / n as f64).sqrt()
        };
        Ok(McEstimate {
            value: mean,
            std_error,
            n_samples: n,
        })
    }

    /// Sample standard deviation implied by the standard error.
    pub fn sample_std(&self) -> f64 {
        self.std_error * (self.n_samples as f64).sqrt()
    }
}

/// `log p_Z(z)` at `z = map(y)`, from `log p_base(y) − log |det ∂z/∂y|`.
pub fn pushforward_log_density(
    base: &GaussianParams,
    map: &InvertibleMap,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dim(base.dim(), map.dim())?;
    check_dim(map.dim(), y.len())?;
    let jac = map.log_abs_det_jacobian(y);
    if !jac.is_finite() {
        return Err(Error::SingularMap);
    }
    Ok(base.log_density(y)? - jac)
}

/// `(1/L) Σ f(map(Y_l))` with `Y_l` drawn from `base`.
pub fn mc_expectation<F>(
    f: F,
    base: &GaussianParams,
    map: &InvertibleMap,
    n_samples: usize,
    seed: Seed,
) -> Result<McEstimate>
where
    F: Fn(&DVector<f64>) -> f64,
{
    check_dim(base.dim(), map.dim())?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let mut rng = Rng::new(seed);
    let mut values = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let y = base.sample_with(&mut rng);
        let v = f(&map.apply(&y));
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { index });
        }
        values.push(v);
    }
    McEstimate::from_samples(values)
}
