use evtchan::gpd::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse-transform GPD draws, written out independently of the library.
fn gpd_draws(xi: f64, sigma: f64, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let v: f64 = 1.0 - rng.random::<f64>();
            if xi == 0.0 {
                -sigma * v.ln()
            } else {
                sigma * (v.powf(-xi) - 1.0) / xi
            }
        })
        .collect()
}

#[test]
fn recovers_heavy_tail_parameters() {
    let y = gpd_draws(0.1, 2.0, 50_000, 11);
    let fit = fit_gpd(&y, 1_000_000, 0.0).unwrap();
    assert!((fit.xi() - 0.1).abs() <= 0.02, "xi {}", fit.xi());
    assert!((fit.sigma() - 2.0).abs() <= 0.04, "sigma {}", fit.sigma());
    assert!(fit.regular);
    // expected-information standard errors
    let se_xi = (1.0 + 0.1) / (50_000f64).sqrt();
    assert!((fit.se_xi.unwrap() / se_xi - 1.0).abs() < 0.1);
    assert_eq!(fit.zeta_u, 0.05);
}

#[test]
fn recovers_exponential_shape() {
    let y = gpd_draws(0.0, 1.0, 50_000, 12);
    let fit = fit_gpd(&y, 50_000, -1.0).unwrap();
    assert!(fit.xi().abs() <= 0.015, "xi {}", fit.xi());
}

#[test]
fn recovers_bounded_tail() {
    let y = gpd_draws(-0.3, 1.5, 20_000, 13);
    let fit = fit_gpd(&y, 20_000, 0.0).unwrap();
    assert!((fit.xi() + 0.3).abs() < 0.03);
    assert!((fit.sigma() - 1.5).abs() < 0.06);
}

#[test]
fn strongly_bounded_tail_is_flagged_non_regular() {
    let y = gpd_draws(-0.8, 1.0, 5_000, 14);
    let fit = fit_gpd(&y, 5_000, 0.0).unwrap();
    assert!(fit.xi() <= -0.5);
    assert!(!fit.regular);
    assert!(fit.se_xi.is_none() && fit.se_sigma.is_none());
}

#[test]
fn mle_is_a_stationary_point() {
    let y = gpd_draws(0.25, 0.7, 5_000, 15);
    let fit = fit_gpd(&y, 5_000, 0.0).unwrap();
    let ll = log_likelihood(&fit.params, &y);
    for (dx, ds) in [(1e-4, 0.0), (-1e-4, 0.0), (0.0, 1e-4), (0.0, -1e-4)] {
        let q = GpdParams::new(fit.xi() + dx, fit.sigma() + ds, 0.0).unwrap();
        assert!(log_likelihood(&q, &y) <= ll + 1e-9);
    }
}

#[test]
fn bias_shrinks_with_sample_size() {
    let mut errs = Vec::new();
    for k in [1_000usize, 10_000, 100_000] {
        let mut total = 0.0;
        for seed in 0..8 {
            let y = gpd_draws(0.2, 1.0, k, 100 + seed);
            total += (fit_gpd(&y, k, 0.0).unwrap().xi() - 0.2).abs();
        }
        errs.push(total / 8.0);
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    assert!(errs[2] < 0.01);
}

#[test]
fn mean_excess_matches_population() {
    let y = gpd_draws(0.2, 1.0, 100_000, 16);
    assert!((mean_excess(&y).unwrap() - 1.25).abs() < 0.02);
    let e = gpd_draws(0.0, 1.0, 100_000, 17);
    assert!((mean_excess(&e).unwrap() - 1.0).abs() < 0.02);
}

#[test]
fn excess_count_is_binomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
    let k = excesses(&x, 0.01).len() as f64;
    assert!((k - 10_000.0).abs() < 4.0 * (10_000.0f64 * 0.99).sqrt());
}

#[test]
fn density_integrates_to_one() {
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
        (f(a) + f(b) + inner) * h / 3.0
    }
    for (xi, sigma) in [(-0.4, 1.0), (-0.1, 2.0), (0.0, 1.0), (0.1, 0.5), (0.3, 1.0)] {
        let p = GpdParams::new(xi, sigma, 0.0).unwrap();
        let total = match p.support_end() {
            Some(end) => simpson(|y| p.density(y), 0.0, end, 200_000),
            // y = e^s - 1 spreads the heavy tail over a bounded range
            None => simpson(|s: f64| p.density(s.exp_m1()) * s.exp(), 0.0, 60.0, 200_000),
        };
        assert!((total - 1.0).abs() < 1e-6, "xi {xi}: {total}");
    }
}

#[test]
fn cdf_matches_integrated_density() {
    let p = GpdParams::new(0.5, 1.0, 0.0).unwrap();
    let n = 200_000;
    let h = 2.0 / n as f64;
    let integral: f64 = (0..n).map(|i| p.density((i as f64 + 0.5) * h) * h).sum();
    assert!((integral - 0.75).abs() < 1e-8);
}

#[test]
fn return_level_matches_empirical_quantile() {
    // tail below u = 0 with mass 0.1 and exact GPD excesses
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let n = 1_000_000;
    let (xi, sigma, zeta) = (0.1, 1.0, 0.1);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = rng.random();
            let v: f64 = 1.0 - rng.random::<f64>();
            if a < zeta {
                -(sigma * (v.powf(-xi) - 1.0) / xi)
            } else {
                1.0 + a
            }
        })
        .collect();
    x.sort_by(f64::total_cmp);
    let fit = GpdFit {
        params: GpdParams::new(xi, sigma, 0.0).unwrap(),
        k: 100_000,
        zeta_u: zeta,
        loglik: 0.0,
        se_xi: None,
        se_sigma: None,
        cov_xi_sigma: None,
        regular: true,
    };
    for m in [1e2, 1e3, 1e4] {
        let r = fit.return_level(m).unwrap();
        // order-statistic band: count below r is Binomial(n, 1/m)
        let below = x.partition_point(|&v| v < r) as f64;
        let mean = n as f64 / m;
        let sd = (mean * (1.0 - 1.0 / m)).sqrt();
        assert!((below - mean).abs() <= 1.96 * sd * 1.5, "m {m}: {below} vs {mean}");
    }
}

#[test]
fn threshold_stability_on_exact_tail() {
    let y = gpd_draws(0.15, 1.0, 200_000, 20);
    // samples x = -y so the lower tail is GPD at u = 0
    let x: Vec<f64> = y.iter().map(|v| -v).collect();
    let f0 = fit_gpd_at(&x, 0.0).unwrap();
    let f1 = fit_gpd_at(&x, -1.0).unwrap();
    let dxi = (f0.xi() - f1.xi()).abs();
    let se = (f0.se_xi.unwrap().powi(2) + f1.se_xi.unwrap().powi(2)).sqrt();
    assert!(dxi < 2.0 * se, "{dxi} vs {se}");
    let ds = (f0.modified_scale() - f1.modified_scale()).abs();
    let se_s = (f0.se_modified_scale().unwrap().powi(2) + f1.se_modified_scale().unwrap().powi(2)).sqrt();
    assert!(ds < 2.0 * se_s, "{ds} vs {se_s}");
}

fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn gradient_matches_finite_differences() {
    let y = gpd_draws(0.1, 1.0, 500, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let xi = rng.random_range(-0.4..0.8);
        let sigma = rng.random_range(0.5..3.0);
        let p = GpdParams::new(xi, sigma, 0.0).unwrap();
        if log_likelihood(&p, &y) == f64::NEG_INFINITY {
            continue;
        }
        let g = log_likelihood_gradient(&p, &y);
        let h = 1e-6;
        let ll = |a: f64, b: f64| log_likelihood(&GpdParams::new(a, b, 0.0).unwrap(), &y);
        let fx = (ll(xi + h, sigma) - ll(xi - h, sigma)) / (2.0 * h);
        let fs = (ll(xi, sigma + h) - ll(xi, sigma - h)) / (2.0 * h);
        assert!(close_rel(g[0], fx, 1e-6), "xi {xi}: {} vs {fx}", g[0]);
        assert!(close_rel(g[1], fs, 1e-6), "sigma {sigma}: {} vs {fs}", g[1]);
    }
}

#[test]
fn gradient_is_continuous_at_zero_shape() {
    let y = gpd_draws(0.0, 1.0, 500, 23);
    let at = |xi: f64| log_likelihood_gradient(&GpdParams::new(xi, 1.0, 0.0).unwrap(), &y);
    let (a, b) = (at(1e-7), at(-1e-7));
    assert!(close_rel(a[0], b[0], 1e-4) && close_rel(a[1], b[1], 1e-4));
}

proptest! {
    #[test]
    fn cdf_is_monotone(xi in prop::sample::select(vec![-0.4, -0.1, 0.0, 0.1, 0.5]), sigma in 0.1f64..5.0) {
        let p = GpdParams::new(xi, sigma, 0.0).unwrap();
        let mut prev = 0.0;
        prop_assert_eq!(gpd_cdf(&p, 0.0).unwrap(), 0.0);
        for i in 1..400 {
            let c = gpd_cdf(&p, i as f64 * sigma * 0.25).unwrap();
            prop_assert!(c >= prev);
            prev = c;
        }
        prop_assert!(gpd_cdf(&p, 1e12 * sigma).unwrap() > 1.0 - 1e-3);
    }

    #[test]
    fn quantile_round_trip(xi in -0.9f64..1.5, sigma in 0.1f64..10.0, e in 0usize..7) {
        let p = GpdParams::new(xi, sigma, 0.0).unwrap();
        for prob in [1e-6, 1e-4, 1e-2, 0.1, 0.5, 0.9, 0.999].iter().skip(e) {
            let y = gpd_quantile(&p, *prob).unwrap();
            prop_assert!((gpd_cdf(&p, y).unwrap() - prob).abs() <= 1e-10);
        }
    }

    #[test]
    fn return_level_inverts_tail_cdf(xi in -0.45f64..1.0, sigma in 0.1f64..5.0, u in -10.0f64..10.0, zeta in 0.01f64..0.5) {
        let fit = GpdFit {
            params: GpdParams::new(xi, sigma, u).unwrap(),
            k: 10, zeta_u: zeta, loglik: 0.0,
            se_xi: None, se_sigma: None, cov_xi_sigma: None, regular: true,
        };
        for m in [1e2, 1e4, 1e6] {
            let r = fit.return_level(m).unwrap();
            prop_assert!(r <= u);
            prop_assert!((fit.tail_cdf(r).unwrap() - 1.0 / m).abs() <= 1e-10);
        }
    }
}
