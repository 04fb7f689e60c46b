//! Autoencoded variational Bayes with MLP encoder and decoder.
//!
//! The encoder maps `x` to the mean and log-variance of a diagonal Gaussian
//! `q(z|x) = N(μ_z, diag(σ_z ⊙ σ_z))`; the decoder maps `z` to the mean and
//! log-variance of a diagonal Gaussian likelihood over `x`. Samples from `q`
//! are taken as `z = μ_z + σ_z ⊙ ε` with `ε ~ N(0, I)`, so bound estimates
//! are differentiable in the network parameters for fixed noise.

mod elbo;
mod mlp;
mod train;

pub use elbo::{
    draw_noise, elbo_a, elbo_b, elbo_with_noise, grad_elbo, ElboEstimate, ElboGradient,
    EstimatorKind,
};
pub use mlp::{Layer, MlpParams};
pub use train::{evaluate_bound, train_from, train_vae, TrainOutcome, VaeConfig, VaeModel};

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::gauss::GaussianParams;
use crate::numeric::LN_2PI;

/// Diagonal Gaussian parametrised by mean and log-variance. The covariance is
/// always `diag(exp(log_var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: DVector<f64>,
    pub log_var: DVector<f64>,
}

pub type EncoderOutput = DiagGaussian;
pub type DecoderOutput = DiagGaussian;

impl DiagGaussian {
    /// Splits a network output `[mean; log_var]`.
    pub fn from_heads(out: &DVector<f64>) -> Result<Self> {
        if out.len() % 2 != 0 || out.is_empty() {
            return Err(Error::invalid("output heads must have even, non-zero width"));
        }
        let n = out.len() / 2;
        Ok(DiagGaussian {
            mean: out.rows(0, n).into_owned(),
            log_var: out.rows(n, n).into_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sigma(&self) -> DVector<f64> {
        self.log_var.map(|lv| (0.5 * lv).exp())
    }

    pub fn log_density(&self, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        Ok((0..self.dim())
            .map(|i| {
                let d = v[i] - self.mean[i];
                -0.5 * LN_2PI - 0.5 * self.log_var[i] - 0.5 * d * d * (-self.log_var[i]).exp()
            })
            .sum())
    }

    pub fn to_gaussian(&self) -> Result<GaussianParams> {
        GaussianParams::diagonal(self.mean.clone(), &self.log_var.map(f64::exp))
    }

    /// `−½ Σ_j (1 + log σ_j² − μ_j² − σ_j²)`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        -0.5 * (0..self.dim())
            .map(|j| 1.0 + self.log_var[j] - self.mean[j].powi(2) - self.log_var[j].exp())
            .sum::<f64>()
    }
}

fn check_heads(net: &MlpParams, which: &str) -> Result<()> {
    if net.output_dim() % 2 != 0 {
        return Err(Error::invalid(format!("{which} output width must be even")));
    }
    Ok(())
}

pub fn encode(x: &DVector<f64>, phi: &MlpParams) -> Result<EncoderOutput> {
    check_heads(phi, "encoder")?;
    DiagGaussian::from_heads(&phi.forward(x)?)
}

pub fn decode(z: &DVector<f64>, theta: &MlpParams) -> Result<DecoderOutput> {
    check_heads(theta, "decoder")?;
    DiagGaussian::from_heads(&theta.forward(z)?)
}

/// `μ_z + exp(½ log_var_z) ⊙ ε`.
pub fn reparam_sample(enc: &EncoderOutput, eps: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(enc.dim(), eps.len())?;
    Ok(&enc.mean + enc.sigma().component_mul(eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Seed};
    use crate::variational::kl_gaussian;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn zero_encoder_gives_standard_normal() {
        let phi = MlpParams::zeros(&[3, 4, 4]);
        let enc = encode(&DVector::from_vec(vec![1.0, 2.0, 3.0]), &phi).unwrap();
        assert_eq!(enc.mean, DVector::zeros(2));
        assert_eq!(enc.log_var, DVector::zeros(2));
        assert_eq!(enc.sigma(), DVector::from_element(2, 1.0));
    }

    #[test]
    fn zero_decoder_gives_standard_normal() {
        let theta = MlpParams::zeros(&[2, 4, 6]);
        let dec = decode(&DVector::from_vec(vec![0.5, -0.5]), &theta).unwrap();
        assert_eq!(dec.mean, DVector::zeros(3));
        assert_eq!(dec.log_var, DVector::zeros(3));
    }

    #[test]
    fn hand_computed_forward_pass() {
        // 2 inputs, 3 tanh units, heads (μ, log σ²) for n_z = 1; reference from a
        // 30-digit mpmath evaluation
        let l1 = Layer {
            weight: DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 0.1, 0.3, -0.4, 0.8]),
            bias: DVector::from_vec(vec![0.1, 0.0, -0.2]),
        };
        let l2 = Layer {
            weight: DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.2, 0.3, -0.6]),
            bias: DVector::from_vec(vec![0.05, -0.1]),
        };
        let phi = MlpParams::new(vec![l1, l2]).unwrap();
        let enc = encode(&DVector::from_vec(vec![1.0, 2.0]), &phi).unwrap();
        assert_abs_diff_eq!(enc.mean[0], 0.023_804_621_085_622_957, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.log_var[0], -0.336_171_096_393_329_1, epsilon = 1e-12);
    }

    #[test]
    fn wrong_input_length() {
        let phi = MlpParams::zeros(&[3, 4, 4]);
        assert!(matches!(
            encode(&DVector::zeros(2), &phi),
            Err(Error::Dimension { expected: 3, actual: 2 })
        ));
        let theta = MlpParams::zeros(&[2, 4, 6]);
        assert!(matches!(decode(&DVector::zeros(3), &theta), Err(Error::Dimension { .. })));
    }

    #[test]
    fn reparam_with_zero_noise_is_mean() {
        let enc = DiagGaussian {
            mean: DVector::from_vec(vec![0.3, -1.2]),
            log_var: DVector::from_vec(vec![0.4, -2.0]),
        };
        assert_eq!(reparam_sample(&enc, &DVector::zeros(2)).unwrap(), enc.mean);
    }

    #[test]
    fn reparam_unit_sigma() {
        let enc = DiagGaussian {
            mean: DVector::from_vec(vec![0.3, -1.2]),
            log_var: DVector::zeros(2),
        };
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(reparam_sample(&enc, &e1).unwrap(), &enc.mean + &e1);
        assert!(reparam_sample(&enc, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn reparam_moments() {
        let enc = DiagGaussian {
            mean: DVector::from_vec(vec![1.5, -0.5]),
            log_var: DVector::from_vec(vec![0.8, -1.0]),
        };
        let n = 100_000;
        let mut rng = Rng::new(Seed(77));
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let eps = DVector::from_fn(2, |_, _| rng.standard_normal());
                reparam_sample(&enc, &eps).unwrap()
            })
            .collect();
        for j in 0..2 {
            let var = enc.log_var[j].exp();
            let mean = draws.iter().map(|z| z[j]).sum::<f64>() / n as f64;
            let s2 = draws.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - enc.mean[j]).abs() < 3.0 * (var / n as f64).sqrt());
            // Var(s²) = 2σ⁴/(n−1) for Gaussian draws
            assert!((s2 - var).abs() < 3.0 * var * (2.0 / (n - 1) as f64).sqrt());
        }
    }

    #[test]
    fn diagonal_kl_specialisation() {
        let q = DiagGaussian {
            mean: DVector::from_vec(vec![0.4, -1.1, 2.0]),
            log_var: DVector::from_vec(vec![-0.3, 0.9, 0.0]),
        };
        let full = kl_gaussian(&q.to_gaussian().unwrap(), &GaussianParams::standard(3)).unwrap();
        assert_abs_diff_eq!(q.kl_to_standard_normal(), full, epsilon = 1e-12);
    }
}
