//! Variational lower bound machinery: Gaussian KL divergence, bound
//! estimates, the evidence decomposition `log p(X) = L[q] + KL(q ‖ p(Z|X))`,
//! mean-field coordinate ascent, and generalised EM.
//!
//! Closed-form updates are provided for joints whose log-density is quadratic
//! in the latent vector, written
//! `log p(X, Z) = c + bᵀz − ½ zᵀΛz` with `Λ` positive definite. For such a
//! joint the posterior is `N(Λ⁻¹b, Λ⁻¹)` and every expectation under a
//! Gaussian `q` is exact.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gauss::{symmetrize, CholeskyFactor, GaussianParams};
use crate::numeric::LN_2PI;
use crate::reparam::McEstimate;
use crate::rng::{Rng, Seed};

/// `KL(q ‖ p)` between two Gaussians of equal dimension.
pub fn kl_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let lp = p.factor();
    // tr(P_p⁻¹ P_q) = ‖L_p⁻¹ L_q‖²_F
    let lq = q.factor().lower();
    let mut trace = 0.0;
    for j in 0..q.dim() {
        trace += lp.solve_lower(&lq.column(j).into_owned()).norm_squared();
    }
    let maha = lp.quad_form_inv(&(p.mean() - q.mean()));
    Ok(0.5 * (trace + maha - q.dim() as f64 + p.log_det_cov() - q.log_det_cov()))
}

/// A joint log-density `c + bᵀz − ½ zᵀΛz`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticJoint {
    precision: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    factor: CholeskyFactor,
}

impl QuadraticJoint {
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        check_dim(linear.len(), precision.nrows())?;
        check_dim(linear.len(), precision.ncols())?;
        let precision = symmetrize(&precision);
        let factor = CholeskyFactor::new(&precision)?;
        Ok(QuadraticJoint {
            precision,
            linear,
            constant,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        self.constant + self.linear.dot(z) - 0.5 * z.dot(&(&self.precision * z))
    }

    pub fn posterior(&self) -> GaussianParams {
        GaussianParams::new(self.factor.solve(&self.linear), self.factor.inverse())
            .expect("inverse of a positive definite precision is a valid covariance")
    }

    /// `log ∫ exp(c + bᵀz − ½zᵀΛz) dz`.
    pub fn log_evidence(&self) -> f64 {
        self.constant + 0.5 * self.factor.quad_form_inv(&self.linear)
            + 0.5 * self.dim() as f64 * LN_2PI
            - 0.5 * self.factor.log_det()
    }

    /// `E_q[log p(X, Z)]` for Gaussian `q = N(m, S)`.
    pub fn expected_log_density(&self, q: &GaussianParams) -> Result<f64> {
        check_dim(self.dim(), q.dim())?;
        let m = q.mean();
        let trace = (&self.precision * q.cov()).trace();
        Ok(self.constant + self.linear.dot(m) - 0.5 * (trace + m.dot(&(&self.precision * m))))
    }

    /// Analytic bound `L[q] = E_q[log p(X, Z)] + H[q]`.
    pub fn vlb(&self, q: &GaussianParams) -> Result<f64> {
        Ok(self.expected_log_density(q)? + q.entropy())
    }
}

type JointFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A latent-variable model with the data baked in: `z ↦ log p(X, z)`.
#[derive(Clone)]
pub struct LatentModel {
    joint: Arc<JointFn>,
    latent_dim: usize,
    exact_log_evidence: Option<f64>,
    exact_posterior: Option<GaussianParams>,
    quadratic: Option<QuadraticJoint>,
}

impl fmt::Debug for LatentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentModel")
            .field("latent_dim", &self.latent_dim)
            .field("exact_log_evidence", &self.exact_log_evidence)
            .field("quadratic", &self.quadratic.is_some())
            .finish()
    }
}

impl LatentModel {
    pub fn from_fn<F>(latent_dim: usize, joint: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        if latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        Ok(LatentModel {
            joint: Arc::new(joint),
            latent_dim,
            exact_log_evidence: None,
            exact_posterior: None,
            quadratic: None,
        })
    }

    /// A tractable model: evidence and posterior are filled in analytically.
    pub fn quadratic(q: QuadraticJoint) -> Self {
        let evidence = q.log_evidence();
        let posterior = q.posterior();
        let for_closure = q.clone();
        LatentModel {
            joint: Arc::new(move |z| for_closure.log_density(z)),
            latent_dim: q.dim(),
            exact_log_evidence: Some(evidence),
            exact_posterior: Some(posterior),
            quadratic: Some(q),
        }
    }

    /// `z ~ prior`, `x_i | z ~ N(A z, R)` independently for each observation.
    pub fn linear_gaussian(
        observations: &[DVector<f64>],
        loading: &DMatrix<f64>,
        noise: &GaussianParams,
        prior: &GaussianParams,
    ) -> Result<Self> {
        let nz = prior.dim();
        let nx = loading.nrows();
        check_dim(nz, loading.ncols())?;
        check_dim(nx, noise.dim())?;
        let r_inv = noise.precision();
        let s_inv = prior.precision();
        let at_rinv = loading.transpose() * &r_inv;
        let n = observations.len() as f64;
        let mut sum_x = DVector::<f64>::zeros(nx);
        let mut constant = -0.5 * nz as f64 * LN_2PI - 0.5 * prior.log_det_cov()
            - 0.5 * prior.factor().quad_form_inv(prior.mean());
        for x in observations {
            check_dim(nx, x.len())?;
            sum_x += x;
            constant += -0.5 * nx as f64 * LN_2PI
                - 0.5 * noise.log_det_cov()
                - 0.5 * noise.factor().quad_form_inv(&(x - noise.mean()));
        }
        // noise mean shifts each observation: x_i − m_R = A z + e_i
        let shifted_sum = &sum_x - noise.mean() * n;
        let precision = &s_inv + &at_rinv * loading * n;
        let linear = &s_inv * prior.mean() + &at_rinv * shifted_sum;
        Ok(Self::quadratic(QuadraticJoint::new(precision, linear, constant)?))
    }

    pub fn with_exact(mut self, log_evidence: f64, posterior: GaussianParams) -> Self {
        self.exact_log_evidence = Some(log_evidence);
        self.exact_posterior = Some(posterior);
        self
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn joint_log_density(&self, z: &DVector<f64>) -> f64 {
        (self.joint)(z)
    }

    pub fn exact_log_evidence(&self) -> Option<f64> {
        self.exact_log_evidence
    }

    pub fn exact_posterior(&self) -> Option<&GaussianParams> {
        self.exact_posterior.as_ref()
    }

    pub fn quadratic_joint(&self) -> Option<&QuadraticJoint> {
        self.quadratic.as_ref()
    }

    fn require_quadratic(&self) -> Result<&QuadraticJoint> {
        self.quadratic.as_ref().ok_or_else(|| {
            Error::UnsupportedModel("closed-form updates need a quadratic joint".into())
        })
    }
}

/// Monte Carlo estimate of `E_q[log p(X, Z) − log q(Z)]`.
pub fn vlb_gaussian_q(
    model: &LatentModel,
    q: &GaussianParams,
    n_mc: usize,
    seed: Seed,
) -> Result<McEstimate> {
    check_dim(model.latent_dim(), q.dim())?;
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    let mut rng = Rng::new(seed);
    let mut values = Vec::with_capacity(n_mc);
    for index in 0..n_mc {
        let z = q.sample_with(&mut rng);
        let v = model.joint_log_density(&z) - q.log_density(&z)?;
        if v.is_nan() {
            return Err(Error::NonFiniteIntegrand { index });
        }
        values.push(v);
    }
    McEstimate::from_samples(values)
}

/// `log p(X) − (L[q] + KL(q ‖ p(Z|X)))`, which vanishes for every `q`.
pub fn evidence_gap(model: &LatentModel, q: &GaussianParams) -> Result<f64> {
    let (evidence, posterior) = match (model.exact_log_evidence, &model.exact_posterior) {
        (Some(e), Some(p)) => (e, p),
        _ => {
            return Err(Error::UnsupportedModel(
                "model has no exact evidence or posterior".into(),
            ))
        }
    };
    let quad = model.require_quadratic()?;
    Ok(evidence - (quad.vlb(q)? + kl_gaussian(q, posterior)?))
}

/// One factor `q_i(Z_i)` of a mean-field approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub params: GaussianParams,
}

impl GaussianFactor {
    pub fn new(params: GaussianParams) -> Self {
        GaussianFactor { params }
    }

    pub fn mean(&self) -> &DVector<f64> {
        self.params.mean()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        self.params.cov()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub factors: Vec<GaussianFactor>,
    pub partition: Vec<Range<usize>>,
    /// Analytic bound after each sweep.
    pub vlb_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl MeanFieldState {
    /// Singleton blocks, each factor `N(0, 1)`.
    pub fn new(latent_dim: usize) -> Result<Self> {
        let partition: Vec<Range<usize>> = (0..latent_dim).map(|i| i..i + 1).collect();
        let factors = partition
            .iter()
            .map(|r| GaussianFactor::new(GaussianParams::standard(r.len())))
            .collect();
        Self::with_factors(partition, factors)
    }

    /// Blocks must be non-empty, disjoint, and cover `0..dim` when sorted.
    pub fn with_factors(partition: Vec<Range<usize>>, factors: Vec<GaussianFactor>) -> Result<Self> {
        if partition.is_empty() {
            return Err(Error::invalid("partition is empty"));
        }
        check_dim(partition.len(), factors.len())?;
        let mut sorted = partition.clone();
        sorted.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &sorted {
            if r.start != next || r.end <= r.start {
                return Err(Error::invalid("partition blocks must tile the latent coordinates"));
            }
            next = r.end;
        }
        for (r, f) in partition.iter().zip(&factors) {
            check_dim(r.len(), f.params.dim())?;
        }
        Ok(MeanFieldState {
            factors,
            partition,
            vlb_trace: Vec::new(),
            sweeps: 0,
            converged: false,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.partition.iter().map(|r| r.end).max().unwrap_or(0)
    }

    /// Sweeps that moved the state; the final sweep confirming convergence is
    /// not counted.
    pub fn effective_sweeps(&self) -> usize {
        if self.converged {
            self.sweeps.saturating_sub(1)
        } else {
            self.sweeps
        }
    }

    /// The product `Π q_i` as one block-diagonal Gaussian.
    pub fn joint(&self) -> GaussianParams {
        let n = self.latent_dim();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for (r, f) in self.partition.iter().zip(&self.factors) {
            mean.rows_mut(r.start, r.len()).copy_from(f.mean());
            cov.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(f.cov());
        }
        GaussianParams::new(mean, cov).expect("block-diagonal of valid factors is valid")
    }
}

/// `q_j* ∝ exp E_{i≠j}[log p(X, Z)]` for block `j`. For a quadratic joint
/// this is Gaussian with precision `Λ_jj` and mean
/// `Λ_jj⁻¹ (b_j − Σ_{i≠j} Λ_ji m_i)`.
pub fn mean_field_update(
    model: &LatentModel,
    state: &MeanFieldState,
    j: usize,
) -> Result<GaussianFactor> {
    let quad = model.require_quadratic()?;
    check_dim(quad.dim(), state.latent_dim())?;
    let block = state
        .partition
        .get(j)
        .ok_or_else(|| Error::invalid(format!("block index {j} out of range")))?
        .clone();
    let lam = quad.precision();
    let mut rhs = quad.linear().rows(block.start, block.len()).into_owned();
    for (r, f) in state.partition.iter().zip(&state.factors) {
        if *r == block {
            continue;
        }
        let cross = lam.view((block.start, r.start), (block.len(), r.len()));
        rhs -= cross * f.mean();
    }
    let lam_jj = lam.view((block.start, block.start), (block.len(), block.len())).into_owned();
    let factor = CholeskyFactor::new(&lam_jj)?;
    Ok(GaussianFactor::new(GaussianParams::new(
        factor.solve(&rhs),
        factor.inverse(),
    )?))
}

/// Cycles through the blocks in order until no factor mean or covariance
/// entry moves by `tol` or more in a sweep, or `max_sweeps` is reached.
pub fn mean_field_fit(
    model: &LatentModel,
    init: MeanFieldState,
    max_sweeps: usize,
    tol: f64,
) -> Result<MeanFieldState> {
    let quad = model.require_quadratic()?;
    check_dim(quad.dim(), init.latent_dim())?;
    let mut state = init;
    state.converged = false;
    while state.sweeps < max_sweeps {
        let mut change: f64 = 0.0;
        for j in 0..state.factors.len() {
            let updated = mean_field_update(model, &state, j)?;
            let old = &state.factors[j];
            change = change
                .max((updated.mean() - old.mean()).abs().max())
                .max((updated.cov() - old.cov()).abs().max());
            state.factors[j] = updated;
        }
        state.sweeps += 1;
        state.vlb_trace.push(quad.vlb(&state.joint())?);
        if change < tol {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

/// A parametric family `θ ↦ log p(X, Z | θ)` that is quadratic in `Z` for
/// every admissible `θ`, with a closed-form M-step.
pub trait ConjugateFamily {
    fn latent_dim(&self) -> usize;

    fn joint(&self, theta: &DVector<f64>) -> Result<QuadraticJoint>;

    /// `argmax_θ E_q[log p(X, Z | θ)]`.
    fn maximize(&self, q: &GaussianParams) -> Result<DVector<f64>>;

    /// `E_q[log p(X, Z | θ)]`, i.e. Baum's auxiliary function with `q` as the
    /// expectation measure.
    fn expected_log_joint(&self, q: &GaussianParams, theta: &DVector<f64>) -> Result<f64>;
}

/// `L[q, θ]`, evaluated through the family's quadratic joint.
pub fn family_vlb<F: ConjugateFamily>(
    family: &F,
    q: &GaussianParams,
    theta: &DVector<f64>,
) -> Result<f64> {
    family.joint(theta)?.vlb(q)
}

/// Variational E-step (`q' = p(Z | X, θ)`) followed by the M-step
/// (`θ' = argmax L[q', θ]`).
pub fn generalized_em_step<F: ConjugateFamily>(
    family: &F,
    q: &GaussianParams,
    theta: &DVector<f64>,
) -> Result<(GaussianParams, DVector<f64>)> {
    check_dim(family.latent_dim(), q.dim())?;
    let q_new = family.joint(theta)?.posterior();
    let theta_new = family.maximize(&q_new)?;
    Ok((q_new, theta_new))
}

/// One latent per scalar observation: `z_n ~ N(μ, s)`, `x_n | z_n ~ N(z_n, r)`
/// with known `r`. Parameters are `θ = [μ, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalNormalFamily {
    observations: Vec<f64>,
    noise_var: f64,
}

impl NormalNormalFamily {
    pub fn new(observations: Vec<f64>, noise_var: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        if !(noise_var > 0.0) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        Ok(NormalNormalFamily {
            observations,
            noise_var,
        })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    fn unpack(theta: &DVector<f64>) -> Result<(f64, f64)> {
        check_dim(2, theta.len())?;
        if !(theta[1] > 0.0) {
            return Err(Error::invalid("prior variance must be positive"));
        }
        Ok((theta[0], theta[1]))
    }

    /// Marginal maximum-likelihood parameters, when the sample variance
    /// exceeds the noise variance.
    pub fn marginal_mle(&self) -> Option<DVector<f64>> {
        let n = self.observations.len() as f64;
        let mean = self.observations.iter().sum::<f64>() / n;
        let var = self.observations.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (var > self.noise_var).then(|| DVector::from_vec(vec![mean, var - self.noise_var]))
    }
}

impl ConjugateFamily for NormalNormalFamily {
    fn latent_dim(&self) -> usize {
        self.observations.len()
    }

    fn joint(&self, theta: &DVector<f64>) -> Result<QuadraticJoint> {
        let (mu, s) = Self::unpack(theta)?;
        let r = self.noise_var;
        let n = self.observations.len();
        let precision = DMatrix::from_diagonal_element(n, n, 1.0 / s + 1.0 / r);
        let linear = DVector::from_iterator(n, self.observations.iter().map(|x| mu / s + x / r));
        let constant: f64 = self
            .observations
            .iter()
            .map(|x| -LN_2PI - 0.5 * s.ln() - 0.5 * r.ln() - mu * mu / (2.0 * s) - x * x / (2.0 * r))
            .sum();
        QuadraticJoint::new(precision, linear, constant)
    }

    fn maximize(&self, q: &GaussianParams) -> Result<DVector<f64>> {
        check_dim(self.latent_dim(), q.dim())?;
        let n = self.observations.len() as f64;
        let m = q.mean();
        let mu = m.sum() / n;
        let s = (0..m.len())
            .map(|i| q.cov()[(i, i)] + (m[i] - mu).powi(2))
            .sum::<f64>()
            / n;
        Ok(DVector::from_vec(vec![mu, s]))
    }

    fn expected_log_joint(&self, q: &GaussianParams, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.latent_dim(), q.dim())?;
        let (mu, s) = Self::unpack(theta)?;
        let r = self.noise_var;
        let m = q.mean();
        Ok(self
            .observations
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let v = q.cov()[(i, i)];
                -0.5 * (2.0 * std::f64::consts::PI * s).ln()
                    - (v + (m[i] - mu).powi(2)) / (2.0 * s)
                    - 0.5 * (2.0 * std::f64::consts::PI * r).ln()
                    - (v + (x - m[i]).powi(2)) / (2.0 * r)
            })
            .sum())
    }
}
