use nalgebra::{DMatrix, DVector};

use super::mlp::MlpParams;
use super::{check_heads, DiagGaussian};
use crate::error::{check_dim, Error, Result};
use crate::gauss::GaussianParams;
use crate::rng::{Rng, Seed};
use crate::variational::kl_gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// `(1/L) Σ [log p(x, z_l) − log q(z_l|x)]`.
    A,
    /// `(1/L) Σ log p(x|z_l) − KL(q(z|x) ‖ p(z))`, KL in closed form.
    B,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(EstimatorKind::A),
            "B" | "b" => Ok(EstimatorKind::B),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

/// A single-datapoint bound estimate, split into the reconstruction term and
/// the regulariser. For kind B the regulariser is the exact KL divergence to
/// the prior; for kind A it is the sampled `log q(z|x) − log p(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub reconstruction: f64,
    pub regularizer: f64,
    pub kind: EstimatorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub estimate: ElboEstimate,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

/// `count` standard-normal vectors of length `n_z` from one stream.
pub fn draw_noise(n_z: usize, count: usize, seed: Seed) -> Vec<DVector<f64>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| DVector::from_fn(n_z, |_, _| rng.standard_normal()))
        .collect()
}

pub fn elbo_a(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    l: usize,
    seed: Seed,
) -> Result<ElboEstimate> {
    let noise = draw_noise(prior.dim(), l, seed);
    elbo_with_noise(x, phi, theta, prior, &noise, EstimatorKind::A)
}

pub fn elbo_b(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    l: usize,
    seed: Seed,
) -> Result<ElboEstimate> {
    let noise = draw_noise(prior.dim(), l, seed);
    elbo_with_noise(x, phi, theta, prior, &noise, EstimatorKind::B)
}

/// Bound estimate with caller-supplied noise `ε_1..ε_L`.
pub fn elbo_with_noise(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    noise: &[DVector<f64>],
    kind: EstimatorKind,
) -> Result<ElboEstimate> {
    Ok(evaluate(x, phi, theta, prior, noise, kind, false)?.estimate)
}

/// Exact reverse-mode gradient of the chosen estimator with respect to every
/// encoder and decoder parameter, holding the noise fixed.
pub fn grad_elbo(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    noise: &[DVector<f64>],
    kind: EstimatorKind,
) -> Result<ElboGradient> {
    evaluate(x, phi, theta, prior, noise, kind, true)
}

fn check_shapes(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    noise: &[DVector<f64>],
) -> Result<()> {
    check_heads(phi, "encoder")?;
    check_heads(theta, "decoder")?;
    let n_z = prior.dim();
    check_dim(phi.input_dim(), x.len())?;
    check_dim(n_z, phi.output_dim() / 2)?;
    check_dim(n_z, theta.input_dim())?;
    check_dim(x.len(), theta.output_dim() / 2)?;
    if noise.is_empty() {
        return Err(Error::invalid("at least one noise sample is required"));
    }
    for eps in noise {
        check_dim(n_z, eps.len())?;
    }
    Ok(())
}

fn evaluate(
    x: &DVector<f64>,
    phi: &MlpParams,
    theta: &MlpParams,
    prior: &GaussianParams,
    noise: &[DVector<f64>],
    kind: EstimatorKind,
    with_grad: bool,
) -> Result<ElboGradient> {
    check_shapes(x, phi, theta, prior, noise)?;
    let n_x = x.len();
    let n_z = prior.dim();
    let inv_l = 1.0 / noise.len() as f64;

    let enc_cache = phi.forward_cached(x)?;
    let q = DiagGaussian::from_heads(enc_cache.output())?;
    let sigma = q.sigma();
    let prior_precision: DMatrix<f64> = prior.precision();

    let mut dec_grad = theta.zeros_like();
    let mut g_mu = DVector::<f64>::zeros(n_z);
    let mut g_lv = DVector::<f64>::zeros(n_z);
    let mut recon = 0.0;
    let mut reg_sampled = 0.0;

    for (index, eps) in noise.iter().enumerate() {
        let z = &q.mean + sigma.component_mul(eps);
        let dec_cache = theta.forward_cached(&z).map_err(|e| e.at_sample(index))?;
        let p = DiagGaussian::from_heads(dec_cache.output())?;
        let log_px = p.log_density(x)?;
        recon += log_px;
        if kind == EstimatorKind::A {
            reg_sampled += q.log_density(&z)? - prior.log_density(&z)?;
        }
        if !log_px.is_finite() {
            return Err(Error::NumericalOverflow {
                location: format!("decoder likelihood, sample {index}"),
            });
        }
        if !with_grad {
            continue;
        }

        // d log p(x|z) / d(decoder heads)
        let mut g_out = DVector::<f64>::zeros(2 * n_x);
        for i in 0..n_x {
            let prec = (-p.log_var[i]).exp();
            let d = x[i] - p.mean[i];
            g_out[i] = d * prec * inv_l;
            g_out[n_x + i] = (-0.5 + 0.5 * d * d * prec) * inv_l;
        }
        let (dg, mut g_z) = theta.backward(&dec_cache, &g_out);
        dec_grad.add_scaled(1.0, &dg);

        if kind == EstimatorKind::A {
            // + log p(z)
            let dz = &z - prior.mean();
            g_z -= &prior_precision * dz * inv_l;
            // − log q(z | μ, lv): explicit partials in z, μ and lv
            for j in 0..n_z {
                let var = q.log_var[j].exp();
                let d = z[j] - q.mean[j];
                g_z[j] += d / var * inv_l;
                g_mu[j] -= d / var * inv_l;
                g_lv[j] += (0.5 - 0.5 * d * d / var) * inv_l;
            }
        }
        // z = μ + exp(½ lv) ⊙ ε
        g_mu += &g_z;
        for j in 0..n_z {
            g_lv[j] += g_z[j] * 0.5 * sigma[j] * eps[j];
        }
    }

    recon *= inv_l;
    let estimate = match kind {
        EstimatorKind::A => {
            let reg = reg_sampled * inv_l;
            ElboEstimate {
                value: recon - reg,
                reconstruction: recon,
                regularizer: reg,
                kind,
            }
        }
        EstimatorKind::B => {
            let kl = kl_gaussian(&q.to_gaussian()?, prior)?;
            ElboEstimate {
                value: recon - kl,
                reconstruction: recon,
                regularizer: kl,
                kind,
            }
        }
    };
    if !estimate.value.is_finite() {
        return Err(Error::NumericalOverflow {
            location: "bound estimate".into(),
        });
    }

    if !with_grad {
        return Ok(ElboGradient {
            estimate,
            encoder: phi.zeros_like(),
            decoder: dec_grad,
        });
    }

    if kind == EstimatorKind::B {
        // − KL(N(μ, diag e^lv) ‖ N(m, P)):
        // ∂/∂μ = Λ(μ − m), ∂/∂lv_j = ½ Λ_jj e^{lv_j} − ½
        g_mu -= &prior_precision * (&q.mean - prior.mean());
        for j in 0..n_z {
            g_lv[j] -= 0.5 * prior_precision[(j, j)] * q.log_var[j].exp() - 0.5;
        }
    }

    let mut g_heads = DVector::<f64>::zeros(2 * n_z);
    g_heads.rows_mut(0, n_z).copy_from(&g_mu);
    g_heads.rows_mut(n_z, n_z).copy_from(&g_lv);
    let (enc_grad, _) = phi.backward(&enc_cache, &g_heads);

    if !enc_grad.is_finite() || !dec_grad.is_finite() {
        return Err(Error::NumericalOverflow {
            location: "parameter gradient".into(),
        });
    }
    Ok(ElboGradient {
        estimate,
        encoder: enc_grad,
        decoder: dec_grad,
    })
}
