use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::optim::{bisect, numerical_hessian, std_errors_from_hessian, NelderMead};
use crate::stats;

pub const MIN_FIT_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Weibull,
    Rician,
    Lognormal,
    Nakagami,
    Normal,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Weibull, Family::Rician, Family::Lognormal, Family::Nakagami, Family::Normal];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::Rician => "rician",
            Family::Lognormal => "lognormal",
            Family::Nakagami => "nakagami",
            Family::Normal => "normal",
        }
    }

    pub fn param_names(&self) -> [&'static str; 2] {
        match self {
            Family::Weibull => ["shape", "scale"],
            Family::Rician => ["nu", "sigma"],
            Family::Lognormal => ["mu", "sigma"],
            Family::Nakagami => ["m", "omega"],
            Family::Normal => ["mean", "sd"],
        }
    }

    /// Amplitude laws are fitted to `√power`.
    pub fn on_amplitude(&self) -> bool {
        matches!(self, Family::Rician | Family::Nakagami)
    }

    pub fn positive_support(&self) -> bool {
        !matches!(self, Family::Normal)
    }

    /// Log-density at `x` for parameters `p`.
    pub fn ln_pdf(&self, p: [f64; 2], x: f64) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        if self.positive_support() && !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self {
            Family::Weibull => {
                let (k, l) = (p[0], p[1]);
                let z = x / l;
                k.ln() - l.ln() + (k - 1.0) * z.ln() - z.powf(k)
            }
            Family::Rician => {
                let (nu, s) = (p[0], p[1]);
                let s2 = s * s;
                x.ln() - s2.ln() - (x * x + nu * nu) / (2.0 * s2) + ln_bessel_i0(x * nu / s2)
            }
            Family::Lognormal => {
                let z = (x.ln() - p[0]) / p[1];
                -x.ln() - p[1].ln() - 0.5 * ln_2pi - 0.5 * z * z
            }
            Family::Nakagami => {
                let (m, o) = (p[0], p[1]);
                std::f64::consts::LN_2 + m * m.ln() - ln_gamma(m) - m * o.ln() + (2.0 * m - 1.0) * x.ln()
                    - m * x * x / o
            }
            Family::Normal => {
                let z = (x - p[0]) / p[1];
                -p[1].ln() - 0.5 * ln_2pi - 0.5 * z * z
            }
        }
    }

    /// CDF at `x`, accurate far into the lower tail.
    pub fn cdf(&self, p: [f64; 2], x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if self.positive_support() && x <= 0.0 {
            return 0.0;
        }
        match self {
            Family::Weibull => -(-(x / p[1]).powf(p[0])).exp_m1(),
            Family::Rician => rician_cdf(p[0], p[1], x),
            Family::Lognormal => normal_cdf((x.ln() - p[0]) / p[1]),
            Family::Nakagami => gamma_lr(p[0], p[0] * x * x / p[1]),
            Family::Normal => normal_cdf((x - p[0]) / p[1]),
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln I₀(z)` for `z ≥ 0`.
pub fn ln_bessel_i0(z: f64) -> f64 {
    let z = z.abs();
    if z <= 30.0 {
        let q = 0.25 * z * z;
        let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum.ln()
    } else {
        // asymptotic expansion, terms ((2k−1)!!)² / (k!·(8z)^k)
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..=12 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * z);
            sum += term;
        }
        z - 0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
    }
}

/// Rician CDF as a Poisson mixture of regularized lower gamma functions.
fn rician_cdf(nu: f64, sigma: f64, x: f64) -> f64 {
    let z = x * x / (2.0 * sigma * sigma);
    let lam = nu * nu / (2.0 * sigma * sigma);
    if lam == 0.0 {
        return -(-z).exp_m1();
    }
    // small k dominates deep in the tail, so the sum always starts at 0
    let k_hi = (lam + 12.0 * lam.sqrt() + 30.0).ceil() as usize;
    let mut total = 0.0;
    for k in 0..=k_hi {
        let kf = k as f64;
        let w = (-lam + kf * lam.ln() - ln_gamma(kf + 1.0)).exp();
        let g = if k == 0 { -(-z).exp_m1() } else { gamma_lr(kf + 1.0, z) };
        total += w * g;
    }
    total.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ParametricFit {
    pub family: Family,
    pub params: [f64; 2],
    pub std_errors: Option<[f64; 2]>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
}

impl ParametricFit {
    pub const N_PARAMS: usize = 2;

    fn new(family: Family, params: [f64; 2], data: &[f64]) -> Result<Self> {
        let loglik: f64 = data.iter().map(|&x| family.ln_pdf(params, x)).sum();
        if !loglik.is_finite() {
            return Err(Error::estimation(format!("{} fit has non-finite likelihood", family.name())));
        }
        let n = data.len();
        let kp = Self::N_PARAMS as f64;
        let nll = |p: &[f64]| -data.iter().map(|&x| family.ln_pdf([p[0], p[1]], x)).sum::<f64>();
        let std_errors = std_errors_from_hessian(&numerical_hessian(nll, &params)).map(|v| [v[0], v[1]]);
        Ok(Self {
            family,
            params,
            std_errors,
            loglik,
            aic: 2.0 * kp - 2.0 * loglik,
            bic: kp * (n as f64).ln() - 2.0 * loglik,
            n,
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.family.cdf(self.params, x)
    }
}

/// Maximum-likelihood fit of one family.
pub fn fit_parametric(data: &[f64], family: Family) -> Result<ParametricFit> {
    if data.len() < MIN_FIT_SAMPLES {
        return Err(Error::insufficient(format!(
            "{} fit needs {MIN_FIT_SAMPLES} samples, got {}",
            family.name(),
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite values"));
    }
    if family.positive_support() && data.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid(format!("{} requires positive data", family.name())));
    }
    let n = data.len() as f64;
    let params = match family {
        Family::Normal => {
            let m = stats::mean(data);
            let s = (data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            [m, s]
        }
        Family::Lognormal => {
            let l: Vec<f64> = data.iter().map(|v| v.ln()).collect();
            let m = stats::mean(&l);
            let s = (l.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            [m, s]
        }
        Family::Weibull => fit_weibull(data)?,
        Family::Nakagami => fit_nakagami(data)?,
        Family::Rician => fit_rician(data)?,
    };
    if params.iter().any(|v| !v.is_finite()) || params[1] <= 0.0 {
        return Err(Error::estimation(format!("{} fit did not converge", family.name())));
    }
    ParametricFit::new(family, params, data)
}

fn fit_weibull(data: &[f64]) -> Result<[f64; 2]> {
    let xmax = data.iter().cloned().fold(0.0, f64::max);
    let lz: Vec<f64> = data.iter().map(|v| (v / xmax).ln()).collect();
    let mean_lz = stats::mean(&lz);
    let score = |lk: f64| {
        let k = lk.exp();
        let (mut a, mut b) = (0.0, 0.0);
        for &l in &lz {
            let w = (k * l).exp();
            a += w * l;
            b += w;
        }
        a / b - 1.0 / k - mean_lz
    };
    let lk = bisect(score, (1e-3f64).ln(), (1e3f64).ln(), 1e-12)
        .ok_or_else(|| Error::estimation("weibull shape equation has no root"))?;
    let k = lk.exp();
    let s = stats::mean(&lz.iter().map(|l| (k * l).exp()).collect::<Vec<_>>());
    Ok([k, xmax * s.powf(1.0 / k)])
}

fn fit_nakagami(data: &[f64]) -> Result<[f64; 2]> {
    let omega = stats::mean(&data.iter().map(|v| v * v).collect::<Vec<_>>());
    let delta = omega.ln() - stats::mean(&data.iter().map(|v| (v * v).ln()).collect::<Vec<_>>());
    if !(delta > 0.0) {
        return Err(Error::estimation("nakagami fit on degenerate data"));
    }
    let lm = bisect(
        |lm: f64| {
            let m = lm.exp();
            m.ln() - digamma(m) - delta
        },
        (1e-4f64).ln(),
        (1e7f64).ln(),
        1e-12,
    )
    .ok_or_else(|| Error::estimation("nakagami shape equation has no root"))?;
    Ok([lm.exp(), omega])
}

fn fit_rician(data: &[f64]) -> Result<[f64; 2]> {
    let m2 = stats::mean(&data.iter().map(|v| v * v).collect::<Vec<_>>());
    let m4 = stats::mean(&data.iter().map(|v| v.powi(4)).collect::<Vec<_>>());
    let nu2 = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
    let s2 = ((m2 - nu2) / 2.0).max(m2 * 1e-3);
    let scale = m2.sqrt();
    let nll = |p: &[f64]| {
        let params = [p[0].abs() * scale, p[1].exp() * scale];
        -data.iter().map(|&x| Family::Rician.ln_pdf(params, x)).sum::<f64>()
    };
    let x0 = [nu2.sqrt() / scale, (s2.sqrt() / scale).ln()];
    let nm = NelderMead { max_iter: 4000, ftol: 1e-12, restarts: 3 };
    let r = nm.minimize(nll, &x0, &[0.1, 0.1]);
    if !r.value.is_finite() {
        return Err(Error::estimation("rician likelihood is not finite"));
    }
    Ok([r.x[0].abs() * scale, r.x[1].exp() * scale])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Candidate {
    pub family: Family,
    pub fit: Option<ParametricFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FitSelection {
    pub best: ParametricFit,
    pub candidates: Vec<Candidate>,
}

/// Fits every family and keeps the lowest AIC; within 2 AIC units of the
/// minimum the lowest BIC wins, then the first listed.
pub fn select_best_fit(data: &[f64], families: &[Family]) -> Result<FitSelection> {
    if families.is_empty() {
        return Err(Error::invalid("no candidate families"));
    }
    let candidates: Vec<Candidate> = families
        .par_iter()
        .map(|&family| match fit_parametric(data, family) {
            Ok(fit) => Candidate { family, fit: Some(fit), error: None },
            Err(e) => Candidate { family, fit: None, error: Some(e.to_string()) },
        })
        .collect();
    let fits: Vec<&ParametricFit> = candidates.iter().filter_map(|c| c.fit.as_ref()).collect();
    let min_aic = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    let mut best: Option<&ParametricFit> = None;
    for f in fits.iter().filter(|f| f.aic - min_aic < 2.0) {
        if best.is_none_or(|b| f.bic < b.bic) {
            best = Some(f);
        }
    }
    let best = best.cloned().ok_or_else(|| {
        let msgs: Vec<String> = candidates.iter().filter_map(|c| c.error.clone()).collect();
        Error::estimation(format!("no family could be fitted: {}", msgs.join("; ")))
    })?;
    Ok(FitSelection { best, candidates })
}

/// Evaluates the fitted CDF at each probe, without refitting.
pub fn extrapolate_tail(fit: &ParametricFit, probes: &[f64]) -> Vec<(f64, f64)> {
    probes.iter().map(|&x| (x, fit.cdf(x))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_series_and_asymptote() {
        assert_eq!(ln_bessel_i0(0.0), 0.0);
        // I0(1) = 1.2660658777520082
        assert!((ln_bessel_i0(1.0) - 1.266_065_877_752_008_2f64.ln()).abs() < 1e-15);
        // continuity across the branch switch
        let a = ln_bessel_i0(30.0);
        let b = ln_bessel_i0(30.0 + 1e-9);
        assert!((a - b).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn rician_zero_nu_is_rayleigh() {
        let x = 0.3;
        let r = rician_cdf(0.0, 1.0, x);
        assert!((r - (1.0 - (-x * x / 2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn information_criteria() {
        let data: Vec<f64> = (1..=100).map(|i| i as f64 / 10.0).collect();
        let f = fit_parametric(&data, Family::Normal).unwrap();
        assert_eq!(f.aic, 4.0 - 2.0 * f.loglik);
        assert_eq!(f.bic, 2.0 * 100f64.ln() - 2.0 * f.loglik);
    }

    #[test]
    fn domain_checks() {
        let mut data: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!(fit_parametric(&data[..10], Family::Normal).is_err());
        data[3] = -1.0;
        assert!(matches!(fit_parametric(&data, Family::Weibull), Err(Error::InvalidArgument(_))));
        assert!(fit_parametric(&data, Family::Normal).is_ok());
    }
}
