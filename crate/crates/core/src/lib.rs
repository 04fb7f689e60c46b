//! Expectation maximisation for Gaussian mixtures, its generalisation through
//! the variational lower bound, mean-field coordinate ascent, and
//! autoencoded variational Bayes with reparametrised gradient estimates.
//!
//! Every stochastic routine takes an explicit [`Seed`]; identical inputs
//! produce bit-identical results.

pub mod error;
pub mod gauss;
pub mod mixture;
pub mod numeric;
pub mod reparam;
pub mod rng;
pub mod tensorfile;
pub mod vae;
pub mod variational;

pub use error::{Error, Result};
pub use gauss::{log_density, sample_gaussian, sigma_ellipse, CholeskyFactor, GaussianParams};
pub use mixture::{
    baum_q, fit_em, generate_gmm_data, init_grid, m_step, mixture_log_likelihood,
    responsibilities, EmPass, EmTrace, MixtureParams, Responsibilities, StopReason, StoppingRule,
};
pub use reparam::{mc_expectation, pushforward_log_density, InvertibleMap, McEstimate};
pub use rng::{Rng, Seed};
pub use vae::{
    decode, elbo_a, elbo_b, encode, grad_elbo, reparam_sample, train_vae, DiagGaussian,
    ElboEstimate, EstimatorKind, MlpParams, VaeConfig, VaeModel,
};
pub use variational::{
    evidence_gap, generalized_em_step, kl_gaussian, mean_field_fit, mean_field_update,
    vlb_gaussian_q, GaussianFactor, LatentModel, MeanFieldState, QuadraticJoint,
};

pub use nalgebra::{DMatrix, DVector};
