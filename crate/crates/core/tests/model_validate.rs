use evtchan::gpd::{fit_gpd, fit_gpd_at, gpd_quantile, GpdFit, GpdParams};
use evtchan::synthetic::{generate, SyntheticFamily, SyntheticSpec};
use evtchan::validate::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal, Weibull};

fn gpd_draws(xi: f64, sigma: f64, k: usize, seed: u64) -> Vec<f64> {
    let p = GpdParams::new(xi, sigma, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| gpd_quantile(&p, rng.random::<f64>()).unwrap()).collect()
}

fn fixed_fit(xi: f64, sigma: f64, u: f64, k: usize) -> GpdFit {
    let mut fit = fit_gpd(&gpd_draws(0.1, 1.0, 100, 0), 1000, u).unwrap();
    fit.params = GpdParams::new(xi, sigma, u).unwrap();
    fit.k = k;
    fit
}

fn phi(z: f64) -> f64 {
    // Simpson integration of the density
    let (a, b) = ((-12.0f64).min(z), z);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn pp_well_specified_k5000() {
    let y = gpd_draws(0.1, 2.0, 5000, 1);
    let fit = fit_gpd(&y, 50_000, 0.0).unwrap();
    let pp = pp_points(&fit, &y).unwrap();
    assert!(pp.max_abs_dev <= 0.02, "{}", pp.max_abs_dev);
    assert!(pp.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    assert!(pp.points.iter().all(|(a, b)| (0.0..=1.0).contains(a) && (0.0..=1.0).contains(b)));
}

#[test]
fn pp_deviation_shrinks_like_root_k() {
    for (i, k) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let y = gpd_draws(0.1, 1.0, k, 10 + i as u64);
        let fit = fixed_fit(0.1, 1.0, 0.0, k);
        let d = pp_points(&fit, &y).unwrap().max_abs_dev;
        // Kolmogorov limit: P(√k·D > 1.63) ≈ 0.01
        assert!(d * (k as f64).sqrt() < 1.63, "k={k} D={d}");
    }
}

#[test]
fn pp_detects_misspecification() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..5000).map(|_| Exp1.sample(&mut rng)).collect();
    let fit = fixed_fit(0.5, 1.0, 0.0, y.len());
    assert!(pp_points(&fit, &y).unwrap().max_abs_dev >= 0.05);
}

#[test]
fn plots_need_three_points() {
    let fit = fixed_fit(0.1, 1.0, 0.0, 1);
    assert!(pp_points(&fit, &[0.5]).is_err());
    assert!(qq_points(&fit, &[-1.0, 2.0, 3.0], 0.0).is_err());
}

#[test]
fn qq_exponential_closed_form() {
    let (u, sigma, k) = (-1.0, 0.7, 2001usize);
    let fit = fixed_fit(0.0, sigma, u, k);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let series: Vec<f64> = (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            u - sigma * e
        })
        .collect();
    let qq = qq_points(&fit, &series, u).unwrap();
    let i = k / 2;
    let closed = u + sigma * (i as f64 / (k + 1) as f64).ln();
    assert!((qq.points[i - 1].1 - closed).abs() < 1e-12);
    // median of the tail: se ≈ σ/(2·f(median)·√k) with f = 1/(2σ)
    assert!((qq.points[i - 1].0 - closed).abs() < 4.0 * sigma / (k as f64).sqrt());
}

#[test]
fn qq_on_diagonal_by_construction() {
    let (u, k) = (2.0, 500);
    let fit = fixed_fit(0.2, 1.5, u, k);
    let series: Vec<f64> =
        (1..=k).map(|i| u - gpd_quantile(&fit.params, 1.0 - i as f64 / (k + 1) as f64).unwrap()).collect();
    let mut with_body = series.clone();
    with_body.extend([u + 1.0, u + 2.0]);
    let qq = qq_points(&fit, &with_body, u).unwrap();
    assert!(qq.max_abs_dev < 1e-12, "{}", qq.max_abs_dev);
    assert!(qq.points.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn qq_well_specified_inside_envelope() {
    let u_star = -2.0;
    let (series, _) = generate(&SyntheticSpec::new(SyntheticFamily::splice(0.1, 1.0, u_star), 200_000, 4)).unwrap();
    let x = series.samples();
    let fit = fit_gpd_at(x, u_star).unwrap();
    let qq = qq_points(&fit, x, u_star).unwrap();
    let env = qq_envelope(&fit, fit.k, 200, 0.95, 9).unwrap();
    assert!(env.contains(&qq), "{} points outside", env.outside(&qq).len());
}

#[test]
fn envelope_rejects_wrong_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let series: Vec<f64> = (0..2000)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            -e
        })
        .collect();
    let fit = fixed_fit(0.4, 0.6, 0.0, 2000);
    let qq = qq_points(&fit, &series, 0.0).unwrap();
    let env = qq_envelope(&fit, 2000, 200, 0.95, 1).unwrap();
    assert!(!env.contains(&qq));
}

fn normal_series(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn composite_matches_normal_cdf() {
    let x = normal_series(100_000, 6);
    let model = fit_composite(&x, 0.05, BandwidthPolicy::Silverman).unwrap();
    let mut worst = 0.0f64;
    for i in 0..200 {
        let z = -4.0 + 8.0 * i as f64 / 199.0;
        worst = worst.max((model.cdf(z) - phi(z)).abs());
    }
    assert!(worst <= 0.01, "{worst}");
    assert!(model.junction_gap() <= 1e-9);
    assert_eq!(model.cdf(model.u_low), model.zeta_low);
}

#[test]
fn composite_is_monotone_with_limits() {
    let x = normal_series(20_000, 7);
    let model = fit_composite(&x, 0.05, BandwidthPolicy::Silverman).unwrap();
    let mut prev = 0.0;
    for i in 0..10_000 {
        let v = model.cdf(-8.0 + 16.0 * i as f64 / 9999.0);
        assert!(v >= prev, "at step {i}");
        prev = v;
    }
    assert!(model.cdf(-1e6) < 1e-12);
    assert!(model.cdf(1e6) > 1.0 - 1e-12);
}

#[test]
fn composite_matches_empirical_deciles() {
    let x = normal_series(50_000, 8);
    let model = fit_composite(&x, 0.05, BandwidthPolicy::Silverman).unwrap();
    let mut s = x.clone();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    for d in 1..10 {
        let q = s[d * n / 10 - 1];
        let emp = (d * n / 10) as f64 / n as f64;
        assert!((model.cdf(q) - emp).abs() <= 2.0 / (n as f64).sqrt(), "decile {d}");
    }
}

#[test]
fn composite_rejects_crossed_thresholds() {
    let x = normal_series(5000, 9);
    let lower = fit_gpd_at(&x, 0.5).unwrap();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let upper = fit_gpd_at(&neg, 0.0).unwrap();
    assert!(build_composite(&x, &lower, &upper, BandwidthPolicy::Silverman).is_err());
}

#[test]
fn weibull_recovered_within_three_se() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = Weibull::new(1.0, 2.0).unwrap();
    let x: Vec<f64> = (0..100_000).map(|_| w.sample(&mut rng)).collect();
    let f = fit_parametric(&x, Family::Weibull).unwrap();
    let se = f.std_errors.unwrap();
    assert!((f.params[0] - 2.0).abs() < 3.0 * se[0], "{:?} {:?}", f.params, se);
    assert!((f.params[1] - 1.0).abs() < 3.0 * se[1]);
}

#[test]
fn weibull_shape_one_on_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..20_000).map(|_| Exp1.sample(&mut rng)).collect();
    let f = fit_parametric(&x, Family::Weibull).unwrap();
    assert!((f.params[0] - 1.0).abs() < 0.03, "{:?}", f.params);
}

fn rician(nu: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            ((nu + sigma * a).powi(2) + (sigma * b).powi(2)).sqrt()
        })
        .collect()
}

#[test]
fn rician_recovered_within_three_se() {
    let x = rician(2.0, 1.0, 20_000, 12);
    let f = fit_parametric(&x, Family::Rician).unwrap();
    let se = f.std_errors.unwrap();
    assert!((f.params[0] - 2.0).abs() < 3.0 * se[0], "{:?} {:?}", f.params, se);
    assert!((f.params[1] - 1.0).abs() < 3.0 * se[1]);
}

#[test]
fn rician_without_line_of_sight_is_rayleigh() {
    let x = rician(0.0, 1.0, 20_000, 13);
    let f = fit_parametric(&x, Family::Rician).unwrap();
    // ν is on the boundary, so ν̂ converges only at rate n^(-1/4); test the
    // likelihood gain over the Rayleigh MLE against the 0.5·χ²₀ + 0.5·χ²₁ law
    let s = (x.iter().map(|v| v * v).sum::<f64>() / (2.0 * x.len() as f64)).sqrt();
    let rayleigh: f64 = x.iter().map(|&v| Family::Rician.ln_pdf([0.0, s], v)).sum();
    let lr = 2.0 * (f.loglik - rayleigh);
    assert!((-1e-6..5.41).contains(&lr), "{lr}");
    assert!(f.params[0] < 0.5 * f.params[1], "{:?}", f.params);
    assert!((f.params[1] - 1.0).abs() < 0.1);
}

#[test]
fn rician_cdf_matches_monte_carlo() {
    let x = rician(1.5, 0.8, 200_000, 14);
    let f = ParametricFitProbe::new(Family::Rician, [1.5, 0.8]);
    for q in [0.3, 1.0, 1.5, 2.5] {
        let emp = x.iter().filter(|&&v| v <= q).count() as f64 / x.len() as f64;
        assert!((f.cdf(q) - emp).abs() < 4e-3, "q={q}");
    }
}

struct ParametricFitProbe {
    family: Family,
    params: [f64; 2],
}

impl ParametricFitProbe {
    fn new(family: Family, params: [f64; 2]) -> Self {
        Self { family, params }
    }
    fn cdf(&self, x: f64) -> f64 {
        self.family.cdf(self.params, x)
    }
}

#[test]
fn nakagami_and_lognormal_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (m, omega) = (1.7, 2.5);
    let g = Gamma::new(m, omega / m).unwrap();
    let x: Vec<f64> = (0..50_000)
        .map(|_| {
            let v: f64 = g.sample(&mut rng);
            v.sqrt()
        })
        .collect();
    let f = fit_parametric(&x, Family::Nakagami).unwrap();
    let se = f.std_errors.unwrap();
    assert!((f.params[0] - m).abs() < 3.0 * se[0], "{:?} {:?}", f.params, se);
    assert!((f.params[1] - omega).abs() < 3.0 * se[1]);

    let y: Vec<f64> = normal_series(50_000, 16).iter().map(|z: &f64| (0.3 + 0.5 * z).exp()).collect();
    let f = fit_parametric(&y, Family::Lognormal).unwrap();
    assert!((f.params[0] - 0.3).abs() < 0.01 && (f.params[1] - 0.5).abs() < 0.01);
}

#[test]
fn best_fit_picks_generating_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = Weibull::new(1.0, 1.5).unwrap();
    let x: Vec<f64> = (0..20_000).map(|_| w.sample(&mut rng)).collect();
    let sel = select_best_fit(&x, &[Family::Weibull, Family::Normal, Family::Lognormal]).unwrap();
    assert_eq!(sel.best.family, Family::Weibull);
    assert_eq!(sel.candidates.len(), 3);

    let single = select_best_fit(&x, &[Family::Normal]).unwrap();
    assert_eq!(single.best.family, Family::Normal);

    let twice = select_best_fit(&x, &[Family::Lognormal, Family::Lognormal]).unwrap();
    assert_eq!(Some(&twice.best), twice.candidates[0].fit.as_ref());
}

#[test]
fn best_fit_errors_when_nothing_fits() {
    let x: Vec<f64> = (0..100).map(|i| i as f64 - 50.0).collect();
    assert!(select_best_fit(&x, &[Family::Weibull, Family::Rician]).is_err());
}

#[test]
fn extrapolation_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let w = Weibull::new(1.0, 2.0).unwrap();
    let x: Vec<f64> = (0..5_000).map(|_| w.sample(&mut rng)).collect();
    let f = fit_parametric(&x, Family::Weibull).unwrap();
    let [k, l] = f.params;
    let q = l * (-(-1e-6f64).ln_1p()).powf(1.0 / k);
    let out = extrapolate_tail(&f, &[q, l * 10.0]);
    assert!((out[0].1 / 1e-6 - 1.0).abs() < 1e-9);
    assert_eq!(out[1].1, f.cdf(l * 10.0));

    let y = normal_series(1000, 19);
    let f = fit_parametric(&y, Family::Normal).unwrap();
    let probe = f.params[0] - 8.0 * f.params[1];
    // Φ(−8) = 6.220960574271784e-16
    let v = extrapolate_tail(&f, &[probe])[0].1;
    assert!((v / 6.220_960_574_271_784e-16 - 1.0).abs() < 1e-6, "{v}");
}

#[test]
fn rmse_of_own_staircase_is_zero() {
    let x = normal_series(1000, 20);
    let pts = empirical_cdf_points(&x);
    let sorted: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let stair = |v: f64| sorted.partition_point(|&s| s <= v) as f64 / sorted.len() as f64;
    assert_eq!(rmse_cdf(stair, &pts, 1e-2).unwrap(), 0.0);
    assert!(rmse_cdf(stair, &pts, 1e-5).is_err());
}

pub fn heavy_tailed_db(n: usize, seed: u64) -> Vec<f64> {
    let fam = SyntheticFamily::GpdTailSplice { xi: 0.2, sigma: 3.0, u_star: -8.0, body_mean: 0.0, body_sd: 4.0 };
    generate(&SyntheticSpec::new(fam, n, seed)).unwrap().0.into_samples()
}

#[test]
fn composite_beats_extrapolated_baselines() {
    let x = heavy_tailed_db(100_000, 21);
    let cmp = compare(&x, None, &CompareConfig::default()).unwrap();
    let r: Vec<f64> = cmp.rmse.iter().map(|r| r.rmse.unwrap()).collect();
    assert_eq!(cmp.rmse[0].model, "composite");
    assert!(r[0] < r[1] && r[0] < r[2], "{:?}", cmp.rmse);
    let mut buf = Vec::new();
    cmp.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("power,empirical,composite,weibull,rician"));
}

#[test]
fn fit_regions() {
    let x: Vec<f64> = (1..=2000).rev().map(f64::from).collect();
    assert_eq!(FitRegion::CdfAbove { min_cdf: 1e-3 }.select(&x).len(), 1999);
    assert_eq!(FitRegion::FirstSamples { count: 1000 }.select(&x)[0], 2000.0);
}

#[test]
fn envelope_coverage_near_nominal() {
    let reps = 60;
    let mut inside = 0;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let x: Vec<f64> = (0..400)
            .map(|_| {
                let v: f64 = 1.0 - rng.random::<f64>();
                -(v.powf(-0.1) - 1.0) / 0.1
            })
            .collect();
        let fit = fit_gpd_at(&x, 0.0).unwrap();
        let qq = qq_points(&fit, &x, 0.0).unwrap();
        let env = qq_envelope(&fit, fit.k, 200, 0.95, 77 + rep).unwrap();
        inside += env.contains(&qq) as usize;
    }
    eprintln!("coverage {inside}/{reps}");
    assert!(inside as f64 / reps as f64 >= 0.85, "{inside}/{reps}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn nondecreasing(v: impl Iterator<Item = f64>) -> bool {
        let v: Vec<f64> = v.collect();
        v.windows(2).all(|w| w[1] >= w[0])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pp_points_are_monotone_in_the_unit_square(
            y in prop::collection::vec(0.0f64..20.0, 3..400),
            xi in -0.4f64..1.0,
            sigma in 0.1f64..5.0,
        ) {
            let fit = fixed_fit(xi, sigma, 0.0, y.len());
            let pp = pp_points(&fit, &y).unwrap();
            prop_assert!(pp.points.iter().all(|&(e, m)| (0.0..=1.0).contains(&e) && (0.0..=1.0).contains(&m)));
            prop_assert!(nondecreasing(pp.points.iter().map(|p| p.0)));
            prop_assert!(nondecreasing(pp.points.iter().map(|p| p.1)));
            let max = pp.points.iter().map(|(e, m)| (e - m).abs()).fold(0.0, f64::max);
            prop_assert_eq!(pp.max_abs_dev, max);
            prop_assert!(pp.rmse_dev <= pp.max_abs_dev);
        }

        #[test]
        fn qq_modeled_quantiles_nondecreasing(
            x in prop::collection::vec(-30.0f64..0.0, 3..400),
            xi in -0.4f64..1.0,
            sigma in 0.1f64..5.0,
        ) {
            let fit = fixed_fit(xi, sigma, 0.0, x.len());
            let qq = qq_points(&fit, &x, 0.0).unwrap();
            prop_assert!(nondecreasing(qq.points.iter().map(|p| p.0)));
            prop_assert!(nondecreasing(qq.points.iter().map(|p| p.1)));
        }

        #[test]
        fn information_criteria_identities(seed in 0u64..1000, shape in 0.5f64..4.0, scale in 0.2f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Weibull::new(scale, shape).unwrap();
            let x: Vec<f64> = (0..200).map(|_| w.sample(&mut rng)).collect();
            for family in [Family::Weibull, Family::Lognormal, Family::Normal] {
                let f = fit_parametric(&x, family).unwrap();
                prop_assert_eq!(f.aic, 2.0 * 2.0 - 2.0 * f.loglik);
                prop_assert_eq!(f.bic, 2.0 * (f.n as f64).ln() - 2.0 * f.loglik);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn composite_is_monotone_and_continuous(seed in 0u64..1000, spread in 0.5f64..10.0, skew in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..4000)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let e: f64 = Exp1.sample(&mut rng);
                    spread * z - skew * e
                })
                .collect();
            let model = fit_composite(&x, 0.05, BandwidthPolicy::Silverman).unwrap();
            prop_assert!(model.junction_gap() <= 1e-9);
            let (lo, hi) = (-60.0 * spread, 60.0 * spread);
            let vals: Vec<f64> = (0..2000).map(|i| model.cdf(lo + (hi - lo) * i as f64 / 1999.0)).collect();
            prop_assert!(nondecreasing(vals.iter().cloned()));
            prop_assert!(vals[0] >= 0.0 && vals[1999] <= 1.0);
        }
    }
}
