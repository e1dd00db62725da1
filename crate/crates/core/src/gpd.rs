//! Generalized Pareto model of lower-tail excesses.
//!
//! For a threshold `u`, a sample `x < u` has excess `y = u − x ≥ 0`. The
//! excess distribution is
//!
//! ```text
//! H(y) = 1 − (1 + ξ·y/σ)^(−1/ξ)     ξ ≠ 0
//! H(y) = 1 − exp(−y/σ)              ξ = 0
//! ```
//!
//! with support `[0, ∞)` for `ξ ≥ 0` and `[0, −σ/ξ]` for `ξ < 0`. This is the
//! ordinary upper-tail peaks-over-threshold model applied to `−X`; the
//! mirrored shape used by some lower-tail write-ups is `−ξ` and is exposed as
//! [`GpdFit::mirrored_shape`].

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim;

/// Below this magnitude the shape is treated as the exponential limit.
pub const EXPONENTIAL_LIMIT: f64 = 1e-8;
/// MLE regularity bound: below it the estimator has no standard asymptotics.
pub const REGULARITY_BOUND: f64 = -0.5;
pub const SHAPE_MIN: f64 = -0.99;
pub const SHAPE_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GpdParams {
    pub xi: f64,
    pub sigma: f64,
    pub u: f64,
}

impl GpdParams {
    pub fn new(xi: f64, sigma: f64, u: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("GPD scale must be > 0, got {sigma}")));
        }
        if !xi.is_finite() || !u.is_finite() {
            return Err(Error::invalid("GPD shape and threshold must be finite"));
        }
        Ok(Self { xi, sigma, u })
    }

    /// Upper end of the excess support, if bounded.
    pub fn support_end(&self) -> Option<f64> {
        (self.xi < 0.0).then(|| -self.sigma / self.xi)
    }

    fn is_exponential(&self) -> bool {
        self.xi.abs() < EXPONENTIAL_LIMIT
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        gpd_cdf(self, y)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        gpd_quantile(self, p)
    }

    /// Density of the excess distribution.
    pub fn density(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        if self.is_exponential() {
            return (-y / self.sigma).exp() / self.sigma;
        }
        let z = self.xi * y / self.sigma;
        if 1.0 + z <= 0.0 {
            return 0.0;
        }
        (-(1.0 + 1.0 / self.xi) * z.ln_1p()).exp() / self.sigma
    }
}

/// Excesses `u − x` of the samples strictly below `u`, in input order.
pub fn excesses(samples: &[f64], u: f64) -> Vec<f64> {
    samples.iter().filter(|&&x| x < u).map(|&x| u - x).collect()
}

pub fn gpd_cdf(params: &GpdParams, y: f64) -> Result<f64> {
    if y < 0.0 || y.is_nan() {
        return Err(Error::invalid(format!("excess must be >= 0, got {y}")));
    }
    if let Some(end) = params.support_end() {
        if y >= end {
            return Ok(1.0);
        }
    }
    let h = if params.is_exponential() {
        -(-y / params.sigma).exp_m1()
    } else {
        let z = params.xi * y / params.sigma;
        -(-z.ln_1p() / params.xi).exp_m1()
    };
    Ok(h.clamp(0.0, 1.0))
}

pub fn gpd_quantile(params: &GpdParams, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("probability must lie in [0, 1), got {p}")));
    }
    let log_surv = (-p).ln_1p();
    Ok(if params.is_exponential() {
        -params.sigma * log_surv
    } else {
        params.sigma / params.xi * (-params.xi * log_surv).exp_m1()
    })
}

/// Log-likelihood of excesses; `−∞` when any excess lies outside the support.
pub fn log_likelihood(params: &GpdParams, excesses: &[f64]) -> f64 {
    let (xi, sigma) = (params.xi, params.sigma);
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ln_sigma = sigma.ln();
    let exponential = params.is_exponential();
    let mut total = 0.0;
    for &y in excesses {
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        if exponential {
            total += -ln_sigma - y / sigma;
        } else {
            let z = xi * y / sigma;
            if 1.0 + z <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += -ln_sigma - (1.0 + 1.0 / xi) * z.ln_1p();
        }
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Analytic gradient `(∂ℓ/∂ξ, ∂ℓ/∂σ)` of [`log_likelihood`].
pub fn log_likelihood_gradient(params: &GpdParams, excesses: &[f64]) -> [f64; 2] {
    let (xi, sigma) = (params.xi, params.sigma);
    let k = excesses.len() as f64;
    let a_max = excesses.iter().fold(0.0f64, |m, &y| m.max(y / sigma));
    let mut d_xi = 0.0;
    let mut sum_a_over_w = 0.0;
    let series = (xi * a_max).abs() < 1e-3;
    for &y in excesses {
        let a = y / sigma;
        let w = 1.0 + xi * a;
        sum_a_over_w += a / w;
        d_xi += if series {
            // expansion of ln(w)/ξ² − (1 + 1/ξ)·a/w around ξ = 0
            (0.5 * a * a - a) + xi * (a * a - 2.0 * a.powi(3) / 3.0) + xi * xi * (0.75 * a.powi(4) - a.powi(3))
        } else {
            w.ln() / (xi * xi) - (1.0 + 1.0 / xi) * a / w
        };
    }
    let d_sigma = -k / sigma + (1.0 + xi) / sigma * sum_a_over_w;
    [d_xi, d_sigma]
}

/// Arithmetic mean of the excesses.
pub fn mean_excess(excesses: &[f64]) -> Result<f64> {
    if excesses.is_empty() {
        return Err(Error::insufficient("mean excess needs at least one excess"));
    }
    Ok(excesses.iter().sum::<f64>() / excesses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GpdFit {
    pub params: GpdParams,
    /// Number of excesses.
    pub k: usize,
    /// Exceedance probability `Pr{X < u}`, estimated as `k / n`.
    pub zeta_u: f64,
    pub loglik: f64,
    pub se_xi: Option<f64>,
    pub se_sigma: Option<f64>,
    pub cov_xi_sigma: Option<f64>,
    /// `false` when `ξ̂ ≤ −0.5`.
    pub regular: bool,
}

impl GpdFit {
    pub fn xi(&self) -> f64 {
        self.params.xi
    }

    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    pub fn u(&self) -> f64 {
        self.params.u
    }

    /// Shape under the mirrored lower-tail sign convention (`−ξ`).
    pub fn mirrored_shape(&self) -> f64 {
        -self.params.xi
    }

    pub fn modified_scale(&self) -> f64 {
        modified_scale(self)
    }

    /// Standard error of `σ* = σ + ξ·u` by the delta method.
    pub fn se_modified_scale(&self) -> Option<f64> {
        let (sx, ss, c) = (self.se_xi?, self.se_sigma?, self.cov_xi_sigma?);
        let u = self.params.u;
        let v = ss * ss + u * u * sx * sx + 2.0 * u * c;
        (v >= 0.0).then(|| v.sqrt())
    }

    pub fn return_level(&self, m: f64) -> Result<f64> {
        return_level(self, m)
    }

    pub fn tail_cdf(&self, x: f64) -> Result<f64> {
        tail_cdf(self, x)
    }
}

/// Threshold-invariant scale `σ* = σ_u + ξ·u`.
pub fn modified_scale(fit: &GpdFit) -> f64 {
    fit.params.sigma + fit.params.xi * fit.params.u
}

/// Level `r_m ≤ u` undercut on average once every `m` observations.
pub fn return_level(fit: &GpdFit, m: f64) -> Result<f64> {
    let mz = m * fit.zeta_u;
    if !(mz >= 1.0) {
        return Err(Error::invalid(format!(
            "return period m = {m} with zeta_u = {} gives m*zeta_u < 1; return level would exceed the threshold",
            fit.zeta_u
        )));
    }
    let p = &fit.params;
    let l = mz.ln();
    Ok(if p.is_exponential() { p.u - p.sigma * l } else { p.u - p.sigma / p.xi * (p.xi * l).exp_m1() })
}

/// Unconditional lower-tail probability `Pr{X < x}` for `x ≤ u`.
pub fn tail_cdf(fit: &GpdFit, x: f64) -> Result<f64> {
    if x > fit.params.u {
        return Err(Error::invalid(format!("tail_cdf is defined below the threshold {} (got {x})", fit.params.u)));
    }
    Ok(fit.zeta_u * (1.0 - gpd_cdf(&fit.params, fit.params.u - x)?))
}

/// Profile state for `θ = ξ/σ`: the likelihood is maximized over `ξ` in
/// closed form for a fixed `θ`.
struct Profile<'a> {
    y: &'a [f64],
    mean: f64,
    max: f64,
}

impl Profile<'_> {
    /// Maps an unconstrained coordinate onto `θ ∈ (−1/y_max, ∞)`.
    fn theta(&self, s: f64) -> f64 {
        if s >= 0.0 {
            s.exp_m1() / self.mean
        } else {
            s.exp_m1() / self.max
        }
    }

    /// Returns `(profile loglik, ξ, σ)`.
    fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let k = self.y.len() as f64;
        if theta == 0.0 {
            return (-k * self.mean.ln() - k, 0.0, self.mean);
        }
        let xi = self.y.iter().map(|&y| (theta * y).ln_1p()).sum::<f64>() / k;
        let sigma = xi / theta;
        if !(sigma > 0.0) || !xi.is_finite() {
            return (f64::NEG_INFINITY, xi, sigma);
        }
        (-k * sigma.ln() - k - k * xi, xi, sigma)
    }

    fn objective(&self, s: f64) -> f64 {
        let (ll, xi, _) = self.eval(self.theta(s));
        if !(SHAPE_MIN..=SHAPE_MAX).contains(&xi) || !ll.is_finite() {
            f64::INFINITY
        } else {
            -ll
        }
    }

    /// Derivative of the profile loglik with respect to θ, divided by k.
    fn slope(&self, theta: f64) -> f64 {
        let k = self.y.len() as f64;
        let (mut xi, mut dxi) = (0.0, 0.0);
        for &y in self.y {
            xi += (theta * y).ln_1p();
            dxi += y / (1.0 + theta * y);
        }
        xi /= k;
        dxi /= k;
        1.0 / theta - dxi / xi - dxi
    }
}

/// Maximum-likelihood GPD fit of lower-tail excesses at threshold `u`.
///
/// The shape is searched on `[−0.99, 2]` through the one-dimensional profile
/// in `θ = ξ/σ`: a coarse grid locates the mode, golden-section search
/// refines it and a bisection on the profile score polishes the result.
pub fn fit_gpd(excesses: &[f64], n_total: usize, u: f64) -> Result<GpdFit> {
    let k = excesses.len();
    if k < 2 {
        return Err(Error::insufficient(format!("GPD fit needs at least 2 excesses, got {k}")));
    }
    if n_total < k {
        return Err(Error::invalid(format!("n_total {n_total} is smaller than the excess count {k}")));
    }
    if let Some(i) = excesses.iter().position(|&y| !(y > 0.0) || !y.is_finite()) {
        return Err(Error::invalid(format!("excess at index {i} is not strictly positive")));
    }
    let mean = excesses.iter().sum::<f64>() / k as f64;
    let max = excesses.iter().cloned().fold(0.0, f64::max);
    let prof = Profile { y: excesses, mean, max };

    const HALF: usize = 24;
    let mut grid = Vec::with_capacity(2 * HALF + 1);
    for i in (1..=HALF).rev() {
        grid.push(-40.0 * (i as f64 / HALF as f64).powi(2));
    }
    grid.push(0.0);
    for i in 1..=HALF {
        grid.push(14.0 * (i as f64 / HALF as f64).powi(2));
    }
    let values: Vec<f64> = grid.iter().map(|&s| prof.objective(s)).collect();
    let (ibest, vbest) =
        values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, v)| (i, *v)).expect("grid is non-empty");
    if !vbest.is_finite() {
        return Err(Error::estimation("GPD profile likelihood has no feasible point on the shape range"));
    }
    let lo = grid[ibest.saturating_sub(1)];
    let hi = grid[(ibest + 1).min(grid.len() - 1)];
    let (mut s_hat, _) = optim::golden_section(|s| prof.objective(s), lo, hi, 1e-12, 200);

    // polish on the profile score where it is well conditioned
    let theta_hat = prof.theta(s_hat);
    if theta_hat.abs() > 1e-6 / mean {
        let (a, b) = (s_hat - 1e-6, s_hat + 1e-6);
        let (ta, tb) = (prof.theta(a), prof.theta(b));
        if ta.signum() == tb.signum() && prof.objective(a).is_finite() && prof.objective(b).is_finite() {
            if let Some(t) = optim::bisect(|t| prof.slope(t), ta, tb, 1e-15) {
                let s = if t >= 0.0 { (t * mean).ln_1p() } else { (t * max).ln_1p() };
                if prof.objective(s) <= prof.objective(s_hat) {
                    s_hat = s;
                }
            }
        }
    }

    let (_, xi, sigma) = prof.eval(prof.theta(s_hat));
    let xi = xi.clamp(SHAPE_MIN, SHAPE_MAX);
    let params = GpdParams::new(xi, sigma, u)?;
    let loglik = log_likelihood(&params, excesses);
    if !loglik.is_finite() {
        return Err(Error::estimation("GPD fit converged to an infeasible point"));
    }
    let regular = xi > REGULARITY_BOUND;
    let cov = if regular { observed_covariance(&params, excesses) } else { None };
    Ok(GpdFit {
        params,
        k,
        zeta_u: k as f64 / n_total as f64,
        loglik,
        se_xi: cov.map(|c| c[(0, 0)].sqrt()),
        se_sigma: cov.map(|c| c[(1, 1)].sqrt()),
        cov_xi_sigma: cov.map(|c| c[(0, 1)]),
        regular,
    })
}

/// Fit at threshold `u` directly from samples.
pub fn fit_gpd_at(samples: &[f64], u: f64) -> Result<GpdFit> {
    fit_gpd(&excesses(samples, u), samples.len(), u)
}

/// Inverse observed information, from central differences of the analytic
/// score.
fn observed_covariance(params: &GpdParams, y: &[f64]) -> Option<Matrix2<f64>> {
    let x = [params.xi, params.sigma];
    let h = [1e-5 * (1.0 + params.xi.abs()), 1e-5 * params.sigma];
    let mut hess = Matrix2::zeros();
    for j in 0..2 {
        let mut plus = x;
        let mut minus = x;
        plus[j] += h[j];
        minus[j] -= h[j];
        let gp = log_likelihood_gradient(&GpdParams { xi: plus[0], sigma: plus[1], u: params.u }, y);
        let gm = log_likelihood_gradient(&GpdParams { xi: minus[0], sigma: minus[1], u: params.u }, y);
        for i in 0..2 {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h[j]);
        }
    }
    let sym = (hess + hess.transpose()) * 0.5;
    let info = -sym;
    if !(info[(0, 0)] > 0.0 && info.determinant() > 0.0) {
        return None;
    }
    let cov = info.try_inverse()?;
    (cov[(0, 0)] > 0.0 && cov[(1, 1)] > 0.0).then_some(cov)
}
