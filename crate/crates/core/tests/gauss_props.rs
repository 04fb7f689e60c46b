mod common;

use common::{gauss_jordan, random_spd, random_vector, rel_err, rng};
use mixlab_core::{log_density, sample_gaussian, sigma_ellipse, DMatrix, DVector, GaussianParams, Seed};
use proptest::prelude::*;

#[test]
fn log_density_matches_gauss_jordan_reference() {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = [1, 2, 3, 5][case % 4];
        let cov = random_spd(&mut r, n, 0.2);
        let mean = random_vector(&mut r, n, 3.0);
        let x = random_vector(&mut r, n, 3.0);
        let g = GaussianParams::new(mean.clone(), cov.clone()).unwrap();
        let got = log_density(&x, &g).unwrap();
        let want = common::log_density(&x, &mean, &cov);
        worst = worst.max(rel_err(got, want, 0.0));
    }
    assert!(worst < 1e-10, "worst relative error {worst:e}");
}

#[test]
fn three_dimensional_reference_value() {
    // 40-digit evaluation of the closed form
    let g = GaussianParams::from_slices(
        &[0.1, 0.5, 1.5],
        &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5],
    )
    .unwrap();
    let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
    let got = log_density(&x, &g).unwrap();
    assert!((got - -5.009_549_495_077_570_2).abs() < 1e-13, "{got}");
}

#[test]
fn sample_covariance_matches() {
    let cases = [
        GaussianParams::from_slices(&[1.0, -2.0], &[2.0, 0.8, 0.8, 1.0]).unwrap(),
        GaussianParams::from_slices(
            &[0.0, 0.5, 3.0],
            &[4.0, -1.0, 0.6, -1.0, 1.5, 0.4, 0.6, 0.4, 0.8],
        )
        .unwrap(),
    ];
    for (i, g) in cases.iter().enumerate() {
        let n = g.dim();
        let draws = sample_gaussian(g, 200_000, Seed(31 + i as u64)).unwrap();
        let count = draws.len() as f64;
        let mean = draws.iter().fold(DVector::zeros(n), |a, x| a + x) / count;
        let cov = draws
            .iter()
            .fold(DMatrix::zeros(n, n), |a, x| a + (x - &mean) * (x - &mean).transpose())
            / (count - 1.0);
        for r in 0..n {
            for c in 0..n {
                let want = g.cov()[(r, c)];
                assert!(
                    ((cov[(r, c)] - want) / want).abs() < 0.05,
                    "case {i} entry ({r},{c}): {} vs {want}",
                    cov[(r, c)]
                );
            }
        }
    }
}

#[test]
fn ellipse_points_lie_on_unit_mahalanobis_contour() {
    let mut r = rng(8);
    for _ in 0..20 {
        let cov = random_spd(&mut r, 2, 0.1);
        let (inv, _) = gauss_jordan(&cov);
        let g = GaussianParams::new(random_vector(&mut r, 2, 5.0), cov).unwrap();
        for p in sigma_ellipse(&g, 64).unwrap() {
            let d = DVector::from_vec(vec![p[0] - g.mean()[0], p[1] - g.mean()[1]]);
            let m = (d.transpose() * &inv * &d)[(0, 0)];
            assert!((m - 1.0).abs() < 1e-9, "{m}");
        }
    }
}

proptest! {
    #[test]
    fn log_density_is_translation_invariant(
        shift in prop::collection::vec(-10.0f64..10.0, 2),
        x in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let g = GaussianParams::from_slices(&[0.0, 0.0], &[1.5, 0.4, 0.4, 0.7]).unwrap();
        let s = DVector::from_vec(shift);
        let x = DVector::from_vec(x);
        let moved = GaussianParams::new(g.mean() + &s, g.cov().clone()).unwrap();
        let a = log_density(&x, &g).unwrap();
        let b = log_density(&(&x + &s), &moved).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn density_never_exceeds_mode(x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let g = GaussianParams::from_slices(
            &[0.5, -0.5, 1.0],
            &[1.0, 0.2, 0.0, 0.2, 2.0, -0.3, 0.0, -0.3, 0.6],
        ).unwrap();
        let at_mode = log_density(g.mean(), &g).unwrap();
        prop_assert!(log_density(&DVector::from_vec(x), &g).unwrap() <= at_mode);
    }
}
