mod common;

use common::{gauss_jordan, random_gaussian, random_spd, random_vector, rng};
use mixlab_core::variational::{family_vlb, ConjugateFamily, NormalNormalFamily};
use mixlab_core::{
    evidence_gap, generalized_em_step, kl_gaussian, mean_field_fit, vlb_gaussian_q, DMatrix,
    DVector, GaussianParams, LatentModel, MeanFieldState, QuadraticJoint, Seed,
};
use proptest::prelude::*;
use std::f64::consts::PI;

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn kl_univariate_quadrature(mq: f64, vq: f64, mp: f64, vp: f64) -> f64 {
    let f = |x: f64| {
        let lq = normal_log_pdf(x, mq, vq);
        lq.exp() * (lq - normal_log_pdf(x, mp, vp))
    };
    adaptive_simpson(&f, -10.0, 10.0, 1e-12)
}

/// Trapezoid rule on a 400 × 400 grid spanning ±9 marginal standard
/// deviations of `q`.
fn kl_grid_quadrature(q: &GaussianParams, p: &GaussianParams) -> f64 {
    let n = 400;
    let sd = [q.cov()[(0, 0)].sqrt(), q.cov()[(1, 1)].sqrt()];
    let lo = [q.mean()[0] - 9.0 * sd[0], q.mean()[1] - 9.0 * sd[1]];
    let h = [18.0 * sd[0] / (n - 1) as f64, 18.0 * sd[1] / (n - 1) as f64];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z = DVector::from_vec(vec![lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]]);
            let lq = common::log_density(&z, q.mean(), q.cov());
            let lp = common::log_density(&z, p.mean(), p.cov());
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            total += wi * wj * lq.exp() * (lq - lp);
        }
    }
    total * h[0] * h[1]
}

#[test]
fn univariate_kl_matches_quadrature() {
    let q = GaussianParams::from_slices(&[0.5], &[0.25]).unwrap();
    let p = GaussianParams::standard(1);
    let quad = kl_univariate_quadrature(0.5, 0.25, 0.0, 1.0);
    assert!((kl_gaussian(&q, &p).unwrap() - quad).abs() < 1e-6);

    let mut r = rng(17);
    for _ in 0..20 {
        let (mq, vq) = (4.0 * r.uniform() - 2.0, 0.2 + 1.5 * r.uniform());
        let (mp, vp) = (4.0 * r.uniform() - 2.0, 0.3 + 2.0 * r.uniform());
        let q = GaussianParams::from_slices(&[mq], &[vq]).unwrap();
        let p = GaussianParams::from_slices(&[mp], &[vp]).unwrap();
        let err = (kl_gaussian(&q, &p).unwrap() - kl_univariate_quadrature(mq, vq, mp, vp)).abs();
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn bivariate_kl_matches_grid_quadrature() {
    let mut r = rng(29);
    for _ in 0..5 {
        let q = random_gaussian(&mut r, 2);
        let p = GaussianParams::new(random_vector(&mut r, 2, 1.0), random_spd(&mut r, 2, 0.5)).unwrap();
        let err = (kl_gaussian(&q, &p).unwrap() - kl_grid_quadrature(&q, &p)).abs();
        assert!(err < 1e-6, "{err:e}");
    }
}

struct Tractable {
    obs: Vec<DVector<f64>>,
    loading: DMatrix<f64>,
    noise: GaussianParams,
    prior: GaussianParams,
}

fn random_tractable(seed: u64) -> Tractable {
    let mut r = rng(seed);
    let nz = 1 + (seed as usize % 3);
    let nx = 1 + (seed as usize / 3 % 3);
    let n_obs = 1 + (seed as usize % 4);
    Tractable {
        obs: (0..n_obs).map(|_| random_vector(&mut r, nx, 3.0)).collect(),
        loading: DMatrix::from_fn(nx, nz, |_, _| 2.0 * r.uniform() - 1.0),
        noise: GaussianParams::new(random_vector(&mut r, nx, 0.5), random_spd(&mut r, nx, 0.3)).unwrap(),
        prior: random_gaussian(&mut r, nz),
    }
}

impl Tractable {
    fn model(&self) -> LatentModel {
        LatentModel::linear_gaussian(&self.obs, &self.loading, &self.noise, &self.prior).unwrap()
    }

    /// Stacked observations are jointly Gaussian with mean `A m₀ + m_R` per
    /// block and covariance `A S₀ Aᵀ` everywhere plus `R` on the diagonal
    /// blocks.
    fn stacked(&self) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let nx = self.loading.nrows();
        let n = self.obs.len();
        let a = &self.loading;
        let block_mean = a * self.prior.mean() + self.noise.mean();
        let shared = a * self.prior.cov() * a.transpose();
        let mut mean = DVector::zeros(nx * n);
        let mut cov = DMatrix::zeros(nx * n, nx * n);
        let mut a_stack = DMatrix::zeros(nx * n, a.ncols());
        for i in 0..n {
            mean.rows_mut(i * nx, nx).copy_from(&block_mean);
            a_stack.view_mut((i * nx, 0), (nx, a.ncols())).copy_from(a);
            for j in 0..n {
                let mut blk = shared.clone();
                if i == j {
                    blk += self.noise.cov();
                }
                cov.view_mut((i * nx, j * nx), (nx, nx)).copy_from(&blk);
            }
        }
        (mean, cov, a_stack)
    }

    fn evidence(&self) -> f64 {
        let (mean, cov, _) = self.stacked();
        let x = DVector::from_iterator(mean.len(), self.obs.iter().flat_map(|v| v.iter().copied()));
        common::log_density(&x, &mean, &cov)
    }

    /// Gaussian conditioning of `z` on the stacked observations.
    fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (mean, cov, a_stack) = self.stacked();
        let x = DVector::from_iterator(mean.len(), self.obs.iter().flat_map(|v| v.iter().copied()));
        let (cov_inv, _) = gauss_jordan(&cov);
        let cross = self.prior.cov() * a_stack.transpose();
        let gain = &cross * cov_inv;
        let m = self.prior.mean() + &gain * (x - mean);
        let s = self.prior.cov() - &gain * cross.transpose();
        (m, s)
    }
}

#[test]
fn linear_gaussian_evidence_and_posterior_match_stacked_marginal() {
    for seed in 0..30 {
        let t = random_tractable(seed);
        let model = t.model();
        let ev = model.exact_log_evidence().unwrap();
        assert!((ev - t.evidence()).abs() < 1e-9 * ev.abs().max(1.0), "seed {seed}");
        let (m, s) = t.posterior();
        let post = model.exact_posterior().unwrap();
        assert!((post.mean() - m).amax() < 1e-9);
        assert!((post.cov() - s).amax() < 1e-9);
    }
}

#[test]
fn decomposition_identity_on_random_models() {
    for seed in 0..50 {
        let t = random_tractable(100 + seed);
        let model = t.model();
        let mut r = rng(seed);
        let q = random_gaussian(&mut r, model.latent_dim());
        let gap = evidence_gap(&model, &q).unwrap();
        assert!(gap.abs() < 1e-8, "seed {seed}: {gap:e}");
    }
}

#[test]
fn perturbed_mean_trades_bound_for_divergence() {
    let t = random_tractable(7);
    let model = t.model();
    let post = model.exact_posterior().unwrap().clone();
    let quad = model.quadratic_joint().unwrap();
    let shifted = GaussianParams::new(post.mean().add_scalar(0.3), post.cov().clone()).unwrap();
    let drop = quad.vlb(&post).unwrap() - quad.vlb(&shifted).unwrap();
    let kl = kl_gaussian(&shifted, &post).unwrap();
    assert!(drop > 0.0);
    assert!((drop - kl).abs() < 1e-10);
    assert!(evidence_gap(&model, &shifted).unwrap().abs() < 1e-8);
}

#[test]
fn monte_carlo_bound_at_posterior_equals_evidence() {
    let t = random_tractable(11);
    let model = t.model();
    let post = model.exact_posterior().unwrap().clone();
    let est = vlb_gaussian_q(&model, &post, 200, Seed(1)).unwrap();
    let ev = model.exact_log_evidence().unwrap();
    assert!((est.value - ev).abs() <= 3.0 * est.std_error + 1e-9);
}

#[test]
fn monte_carlo_bound_never_exceeds_evidence() {
    for seed in 0..10 {
        let t = random_tractable(200 + seed);
        let model = t.model();
        let mut r = rng(seed);
        let q = random_gaussian(&mut r, model.latent_dim());
        let est = vlb_gaussian_q(&model, &q, 2000, Seed(seed)).unwrap();
        let ev = model.exact_log_evidence().unwrap();
        assert!(est.value <= ev + 3.0 * est.std_error, "seed {seed}");
        assert!(model.quadratic_joint().unwrap().vlb(&q).unwrap() <= ev);
    }
}

fn random_quadratic(seed: u64, dim: usize) -> LatentModel {
    let mut r = rng(seed);
    let lam = random_spd(&mut r, dim, 0.5);
    let b = random_vector(&mut r, dim, 2.0);
    LatentModel::quadratic(QuadraticJoint::new(lam, b, 0.0).unwrap())
}

#[test]
fn coupled_bivariate_fixed_point() {
    let lam = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let b = DVector::from_vec(vec![1.0, -0.5]);
    let model = LatentModel::quadratic(QuadraticJoint::new(lam, b, 0.0).unwrap());
    let state = mean_field_fit(&model, MeanFieldState::new(2).unwrap(), 100, 1e-10).unwrap();
    assert!(state.converged);
    // both fixed-point equations m1 = (1 − m2)/2, m2 = (−0.5 − m1)/2 solved by hand
    let want = [5.0 / 6.0, -2.0 / 3.0];
    for j in 0..2 {
        assert!((state.factors[j].mean()[0] - want[j]).abs() < 1e-8);
        assert!((state.factors[j].cov()[(0, 0)] - 0.5).abs() < 1e-8);
    }
    // true marginal variance is (Λ⁻¹)_jj = 2/3
    let sigma = model.exact_posterior().unwrap().cov().clone();
    for j in 0..2 {
        assert!(state.factors[j].cov()[(0, 0)] <= sigma[(j, j)] + 1e-10);
    }
}

#[test]
fn mean_field_trace_increases_on_random_models() {
    for seed in 0..10 {
        let dim = 2 + seed as usize % 4;
        let model = random_quadratic(seed, dim);
        let state = mean_field_fit(&model, MeanFieldState::new(dim).unwrap(), 1000, 1e-12).unwrap();
        assert!(state.converged);
        let limit = *state.vlb_trace.last().unwrap();
        for pair in state.vlb_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
            if limit - pair[1] > 1e-9 {
                assert!(pair[1] > pair[0], "seed {seed}: stalled before the limit");
            }
        }
        let sigma = model.exact_posterior().unwrap().cov().clone();
        for (j, f) in state.factors.iter().enumerate() {
            assert!(f.cov()[(0, 0)] <= sigma[(j, j)] + 1e-10);
        }
    }
}

/// `E_q[log p(X, Z | μ, s)] + H[q]` for the normal-normal family, written out
/// per coordinate.
fn normal_normal_bound(x: &[f64], r: f64, m: &[f64], v: &[f64], mu: f64, s: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        total += -0.5 * (2.0 * PI * s).ln() - (v[i] + (m[i] - mu).powi(2)) / (2.0 * s);
        total += -0.5 * (2.0 * PI * r).ln() - (v[i] + (x[i] - m[i]).powi(2)) / (2.0 * r);
        total += 0.5 * (2.0 * PI * std::f64::consts::E * v[i]).ln();
    }
    total
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn generalized_em_step_matches_numeric_maximizer() {
    let x = vec![0.4, -1.3, 2.2, 0.9, 1.7, -0.2];
    let r = 0.5;
    let family = NormalNormalFamily::new(x.clone(), r).unwrap();
    let theta = DVector::from_vec(vec![-1.0, 3.0]);
    let q0 = GaussianParams::standard(x.len());
    let (q1, theta1) = generalized_em_step(&family, &q0, &theta).unwrap();

    // conjugate posterior per observation
    let v = 1.0 / (1.0 / theta[1] + 1.0 / r);
    for (i, xi) in x.iter().enumerate() {
        assert!((q1.cov()[(i, i)] - v).abs() < 1e-12);
        assert!((q1.mean()[i] - v * (theta[0] / theta[1] + xi / r)).abs() < 1e-12);
    }
    let m: Vec<f64> = q1.mean().iter().copied().collect();
    let vs = vec![v; x.len()];
    let best_mu_for = |s: f64| golden_max(|mu| normal_normal_bound(&x, r, &m, &vs, mu, s), -10.0, 10.0);
    let s_star = golden_max(|ls: f64| {
        let s = ls.exp();
        normal_normal_bound(&x, r, &m, &vs, best_mu_for(s), s)
    }, -8.0, 5.0)
    .exp();
    let mu_star = best_mu_for(s_star);
    assert!((theta1[0] - mu_star).abs() < 1e-6, "{} vs {mu_star}", theta1[0]);
    assert!((theta1[1] - s_star).abs() < 1e-6, "{} vs {s_star}", theta1[1]);
    let direct = normal_normal_bound(&x, r, &m, &vs, theta1[0], theta1[1]);
    assert!((family_vlb(&family, &q1, &theta1).unwrap() - direct).abs() < 1e-10);
}

#[test]
fn generalized_em_bound_is_non_decreasing() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..8).map(|_| 4.0 * r.uniform() - 1.0).collect();
        let family = NormalNormalFamily::new(x.clone(), 0.3).unwrap();
        let mut theta = DVector::from_vec(vec![6.0 * r.uniform() - 3.0, 0.1 + 3.0 * r.uniform()]);
        let mut q = GaussianParams::standard(x.len());
        let mut last = family_vlb(&family, &q, &theta).unwrap();
        for _ in 0..30 {
            let (q_new, theta_new) = generalized_em_step(&family, &q, &theta).unwrap();
            let bound = family_vlb(&family, &q_new, &theta_new).unwrap();
            assert!(bound >= last - 1e-9, "seed {seed}");
            last = bound;
            q = q_new;
            theta = theta_new;
        }
    }
}

proptest! {
    #[test]
    fn kl_is_non_negative(seed in 0u64..100_000, dim in 1usize..5) {
        let mut r = rng(seed);
        let q = random_gaussian(&mut r, dim);
        let p = random_gaussian(&mut r, dim);
        prop_assert!(kl_gaussian(&q, &p).unwrap() >= -1e-12);
    }

    #[test]
    fn bound_equals_expected_joint_plus_entropy(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..4).map(|_| 3.0 * r.uniform() - 1.0).collect();
        let family = NormalNormalFamily::new(x, 0.7).unwrap();
        let q = random_gaussian(&mut r, 4);
        let theta = DVector::from_vec(vec![r.uniform(), 0.2 + r.uniform()]);
        let lhs = family_vlb(&family, &q, &theta).unwrap();
        let rhs = family.expected_log_joint(&q, &theta).unwrap() + q.entropy();
        prop_assert!((lhs - rhs).abs() < 1e-8);
    }
}
