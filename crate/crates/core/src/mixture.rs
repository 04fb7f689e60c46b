//! Gaussian mixture models fitted by expectation maximisation.
//!
//! Densities are combined in log space throughout: an `N × K` table of
//! `log π_k + log N(x_n; μ_k, P_k)` is reduced row-wise with log-sum-exp for
//! the incomplete-data log-likelihood and normalised row-wise for the
//! responsibilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gauss::GaussianParams;
use crate::numeric::log_sum_exp;
use crate::rng::{Rng, Seed};

/// Tolerance on `Σ π_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A column whose responsibility mass is below this fraction of `N` is
/// treated as an empty component.
pub const EMPTY_COMPONENT_FRACTION: f64 = 1e-10;

/// Scale of the ridge added to every M-step covariance, relative to the mean
/// per-coordinate variance of the data.
pub const COV_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<GaussianParams>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        check_dim(components.len(), weights.len())?;
        let dim = components[0].dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(MixtureParams {
            weights,
            components,
        })
    }

    /// The three-component mixture used for the reference experiment.
    pub fn reference() -> Self {
        let cov = [0.5, 0.0, 0.0, 0.5];
        let comps = [[0.0, 2.0], [3.0, 1.0], [6.0, 3.0]]
            .iter()
            .map(|m| GaussianParams::from_slices(m, &cov).unwrap())
            .collect();
        MixtureParams::new(vec![0.25, 0.40, 0.35], comps).unwrap()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    /// Reorders components (and weights) so that new index `i` holds old
    /// component `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_dim(self.n_components(), order.len())?;
        let mut seen = vec![false; order.len()];
        for &o in order {
            if o >= order.len() || seen[o] {
                return Err(Error::invalid("order is not a permutation"));
            }
            seen[o] = true;
        }
        Ok(MixtureParams {
            weights: order.iter().map(|&o| self.weights[o]).collect(),
            components: order.iter().map(|&o| self.components[o].clone()).collect(),
        })
    }

    /// Largest absolute difference over every weight, mean and covariance
    /// entry. Both mixtures must have the same shape.
    pub fn max_abs_diff(&self, other: &MixtureParams) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.weights.iter().zip(&other.weights) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.components.iter().zip(&other.components) {
            m = m.max((a.mean() - b.mean()).abs().max());
            m = m.max((a.cov() - b.cov()).abs().max());
        }
        m
    }
}

/// Posterior component probabilities, one row per datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    w: DMatrix<f64>,
}

impl Responsibilities {
    /// Wraps an `N × K` matrix after checking that every row is a
    /// probability vector.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        for (n, row) in w.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("row {n} has entries outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("row {n} does not sum to 1")));
            }
        }
        Ok(Responsibilities { w })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n_points(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.w.ncols()
    }

    /// Most probable component per row; ties go to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.w
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub max_passes: usize,
    pub loglik_tol: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            max_passes: 50,
            loglik_tol: 1e-3,
        }
    }
}

impl StoppingRule {
    pub fn new(max_passes: usize, loglik_tol: f64) -> Result<Self> {
        if max_passes < 1 {
            return Err(Error::invalid("max_passes must be at least 1"));
        }
        if !(loglik_tol > 0.0) {
            return Err(Error::invalid("loglik_tol must be positive"));
        }
        Ok(StoppingRule {
            max_passes,
            loglik_tol,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxPasses,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Converged => f.write_str("converged"),
            StopReason::MaxPasses => f.write_str("max-passes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmPass {
    pub pass: usize,
    pub params: MixtureParams,
    pub log_likelihood: f64,
}

/// The full history of an EM run. Entry 0 holds the initial parameters; entry
/// `p` holds the parameters after pass `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub passes: Vec<EmPass>,
    pub stop_reason: StopReason,
}

impl EmTrace {
    pub fn passes_used(&self) -> usize {
        self.passes.last().map_or(0, |p| p.pass)
    }

    pub fn final_params(&self) -> &MixtureParams {
        &self.passes.last().expect("trace is never empty").params
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.passes.last().expect("trace is never empty").log_likelihood
    }

    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.passes.iter().map(|p| p.log_likelihood).collect()
    }
}

fn check_data(x: &[DVector<f64>], dim: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("data set is empty"));
    }
    for xi in x {
        check_dim(dim, xi.len())?;
    }
    Ok(())
}

/// `N × K` table of `log π_k + log N(x_n; μ_k, P_k)`.
fn log_joint_table(x: &[DVector<f64>], theta: &MixtureParams) -> Result<DMatrix<f64>> {
    check_data(x, theta.dim())?;
    let k = theta.n_components();
    let log_w: Vec<f64> = theta.weights.iter().map(|w| w.ln()).collect();
    let mut table = DMatrix::<f64>::zeros(x.len(), k);
    for (n, xn) in x.iter().enumerate() {
        for (j, comp) in theta.components.iter().enumerate() {
            table[(n, j)] = log_w[j] + comp.log_density(xn)?;
        }
    }
    Ok(table)
}

fn row_lse(table: &DMatrix<f64>, n: usize) -> f64 {
    let row: Vec<f64> = table.row(n).iter().copied().collect();
    log_sum_exp(&row)
}

/// `Σ_n log Σ_k π_k N(x_n; μ_k, P_k)`.
pub fn mixture_log_likelihood(x: &[DVector<f64>], theta: &MixtureParams) -> Result<f64> {
    let table = log_joint_table(x, theta)?;
    Ok((0..x.len()).map(|n| row_lse(&table, n)).sum())
}

pub fn responsibilities(x: &[DVector<f64>], theta: &MixtureParams) -> Result<Responsibilities> {
    let table = log_joint_table(x, theta)?;
    Ok(Responsibilities {
        w: normalize_rows(&table)?,
    })
}

fn normalize_rows(table: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut w = table.clone();
    for n in 0..table.nrows() {
        let lse = row_lse(table, n);
        if !lse.is_finite() {
            return Err(Error::DegenerateResponsibility { row: n });
        }
        for j in 0..table.ncols() {
            w[(n, j)] = (table[(n, j)] - lse).exp();
        }
        let s = w.row(n).sum();
        if !(s > 0.0) {
            return Err(Error::DegenerateResponsibility { row: n });
        }
        w.row_mut(n).unscale_mut(s);
    }
    Ok(w)
}

/// Baum's auxiliary function `Σ_n Σ_k w_nk (log π_k + log N(x_n; μ_k, P_k))`.
/// Terms with zero responsibility contribute nothing, even where the log term
/// is `-inf`.
pub fn baum_q(x: &[DVector<f64>], theta: &MixtureParams, w: &Responsibilities) -> Result<f64> {
    check_dim(x.len(), w.n_points())?;
    check_dim(theta.n_components(), w.n_components())?;
    let table = log_joint_table(x, theta)?;
    let mut q = 0.0;
    for n in 0..x.len() {
        for j in 0..theta.n_components() {
            let wn = w.w[(n, j)];
            if wn != 0.0 {
                q += wn * table[(n, j)];
            }
        }
    }
    Ok(q)
}

/// Ridge `λ = COV_REGULARIZATION · trace(S) / n_x` where `S` is the (biased)
/// sample covariance of `x`.
pub fn covariance_regularization(x: &[DVector<f64>]) -> Result<f64> {
    check_data(x, x.first().map_or(0, |v| v.len()))?;
    let n = x.len() as f64;
    let dim = x[0].len();
    let mean = x.iter().fold(DVector::<f64>::zeros(dim), |acc, v| acc + v) / n;
    let trace: f64 = x.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / n;
    Ok(COV_REGULARIZATION * trace / dim as f64)
}

/// Maximises Baum's auxiliary function for fixed responsibilities. Each
/// covariance uses the freshly updated mean and carries the ridge from
/// [`covariance_regularization`].
pub fn m_step(x: &[DVector<f64>], w: &Responsibilities) -> Result<MixtureParams> {
    let reg = covariance_regularization(x)?;
    m_step_with_ridge(x, w, reg)
}

pub fn m_step_with_ridge(
    x: &[DVector<f64>],
    w: &Responsibilities,
    ridge: f64,
) -> Result<MixtureParams> {
    let dim = x.first().map_or(0, |v| v.len());
    check_data(x, dim)?;
    check_dim(x.len(), w.n_points())?;
    let n = x.len() as f64;
    let k = w.n_components();
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let col = w.w.column(j);
        let mass: f64 = col.sum();
        if !(mass >= EMPTY_COMPONENT_FRACTION * n) {
            return Err(Error::EmptyComponent {
                component: j,
                mass,
            });
        }
        let mean = x
            .iter()
            .zip(col.iter())
            .fold(DVector::<f64>::zeros(dim), |acc, (xn, &wn)| acc + xn * wn)
            / mass;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for (xn, &wn) in x.iter().zip(col.iter()) {
            let d = xn - &mean;
            cov += (&d * d.transpose()) * wn;
        }
        cov /= mass;
        for i in 0..dim {
            cov[(i, i)] += ridge;
        }
        let cov = crate::gauss::symmetrize(&cov);
        weights.push(mass / n);
        comps.push(GaussianParams::new(mean, cov)?);
    }
    // Row normalisation makes Σ π_k = 1 up to rounding; remove the residue.
    let total: f64 = weights.iter().sum();
    for wk in &mut weights {
        *wk /= total;
    }
    MixtureParams::new(weights, comps)
}

/// Grid initialisation for 2-D data: bounding box split into `r × r` cells,
/// `r = ceil(√K̂)`; `K̂` distinct cells drawn uniformly without replacement;
/// means at cell centres; every covariance `diag(σ_x², σ_y²)` with
/// `σ = extent / 6`; weights `1/K̂`.
pub fn init_grid(x: &[DVector<f64>], k_hat: usize, seed: Seed) -> Result<MixtureParams> {
    check_data(x, 2)?;
    if k_hat < 1 {
        return Err(Error::invalid("k_hat must be at least 1"));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in x {
        x_min = x_min.min(p[0]);
        x_max = x_max.max(p[0]);
        y_min = y_min.min(p[1]);
        y_max = y_max.max(p[1]);
    }
    let width = x_max - x_min;
    let height = y_max - y_min;
    if !(width > 0.0) || !(height > 0.0) {
        return Err(Error::DegenerateData(format!(
            "bounding box has zero extent ({width} x {height})"
        )));
    }
    let r = grid_side(k_hat);
    let mut cells: Vec<usize> = (0..r * r).collect();
    let mut rng = Rng::new(seed);
    // partial Fisher–Yates: the first k_hat slots are a uniform draw without
    // replacement
    for i in 0..k_hat {
        let j = i + rng.below(cells.len() - i);
        cells.swap(i, j);
    }
    let sx = width / 6.0;
    let sy = height / 6.0;
    let cov = [sx * sx, 0.0, 0.0, sy * sy];
    let comps = cells[..k_hat]
        .iter()
        .map(|&c| {
            let (col, row) = (c % r, c / r);
            let cx = x_min + (col as f64 + 0.5) * width / r as f64;
            let cy = y_min + (row as f64 + 0.5) * height / r as f64;
            GaussianParams::from_slices(&[cx, cy], &cov)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::new(vec![1.0 / k_hat as f64; k_hat], comps)
}

/// `ceil(√k)` computed exactly in integers.
pub fn grid_side(k: usize) -> usize {
    let mut r = 1;
    while r * r < k {
        r += 1;
    }
    r
}

/// One E-step followed by one M-step.
pub fn em_pass(x: &[DVector<f64>], theta: &MixtureParams, ridge: f64) -> Result<MixtureParams> {
    let w = responsibilities(x, theta)?;
    m_step_with_ridge(x, &w, ridge)
}

/// Alternates E- and M-steps from `init` until the absolute change in
/// log-likelihood drops below `stop.loglik_tol` or `stop.max_passes` passes
/// have run.
pub fn fit_em(x: &[DVector<f64>], stop: &StoppingRule, init: MixtureParams) -> Result<EmTrace> {
    check_data(x, init.dim())?;
    let ridge = covariance_regularization(x)?;
    let ll0 = mixture_log_likelihood(x, &init).map_err(|e| e.at_pass(0))?;
    let mut passes = vec![EmPass {
        pass: 0,
        params: init,
        log_likelihood: ll0,
    }];
    let mut stop_reason = StopReason::MaxPasses;
    for p in 1..=stop.max_passes {
        let prev = passes.last().unwrap();
        let params = em_pass(x, &prev.params, ridge).map_err(|e| e.at_pass(p))?;
        let ll = mixture_log_likelihood(x, &params).map_err(|e| e.at_pass(p))?;
        let delta = (ll - prev.log_likelihood).abs();
        passes.push(EmPass {
            pass: p,
            params,
            log_likelihood: ll,
        });
        if delta < stop.loglik_tol {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    Ok(EmTrace {
        passes,
        stop_reason,
    })
}

/// Draws `n` labelled samples: `z_i ~ Categorical(π)`, then
/// `x_i ~ N(μ_{z_i}, P_{z_i})`. Labels are zero-based.
pub fn generate_gmm_data(
    theta: &MixtureParams,
    n: usize,
    seed: Seed,
) -> Result<(Vec<DVector<f64>>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = Rng::new(seed);
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for _ in 0..n {
        let z = rng.categorical(&theta.weights);
        xs.push(theta.components[z].sample_with(&mut rng));
        zs.push(z);
    }
    Ok((xs, zs))
}
