use evtchan::synthetic::{generate, SyntheticFamily, SyntheticSpec};
use proptest::prelude::*;

/// Largest gap between the empirical CDF of `x` and `cdf`.
fn ks_distance(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn dkw(n: usize) -> f64 {
    // Pr{sup |F_n − F| > ε} ≤ 2·exp(−2nε²) = 0.01
    ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt()
}

#[test]
fn exponential_draws_within_dkw_band() {
    let x = generate(&SyntheticSpec::new(SyntheticFamily::Exponential { scale: 2.0 }, 1_000_000, 1))
        .unwrap()
        .0
        .into_samples();
    let n = x.len();
    let d = ks_distance(x, |v| 1.0 - (-v / 2.0).exp());
    assert!(d <= dkw(n), "{d} > {}", dkw(n));
}

#[test]
fn spliced_tail_excesses_within_dkw_band() {
    let (xi, sigma, u_star) = (0.2, 1.5, 1.0);
    let fam = SyntheticFamily::GpdTailSplice { xi, sigma, u_star, body_mean: 0.0, body_sd: 1.0 };
    let x = generate(&SyntheticSpec::new(fam, 1_000_000, 2)).unwrap().0.into_samples();
    let y: Vec<f64> = x.iter().filter(|&&v| v < u_star).map(|v| u_star - v).collect();
    let k = y.len();
    let d = ks_distance(y, |v| 1.0 - (1.0 + xi * v / sigma).powf(-1.0 / xi));
    assert!(d <= dkw(k), "{d} > {}", dkw(k));
}

#[test]
fn rayleigh_draws_within_dkw_band() {
    let x =
        generate(&SyntheticSpec::new(SyntheticFamily::Rayleigh { sigma: 0.7 }, 200_000, 3)).unwrap().0.into_samples();
    let n = x.len();
    let d = ks_distance(x, |v| 1.0 - (-v * v / (2.0 * 0.49)).exp());
    assert!(d <= dkw(n), "{d} > {}", dkw(n));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prefix_and_seed_determinism(seed in any::<u64>(), n in 1usize..500, extra in 1usize..500) {
        let fam = SyntheticFamily::splice(0.1, 1.0, -1.0);
        let short = generate(&SyntheticSpec::new(fam.clone(), n, seed)).unwrap().0.into_samples();
        let long = generate(&SyntheticSpec::new(fam.clone(), n + extra, seed)).unwrap().0.into_samples();
        prop_assert_eq!(&short[..], &long[..n]);
        let again = generate(&SyntheticSpec::new(fam, n, seed)).unwrap().0.into_samples();
        prop_assert_eq!(short, again);
    }
}
