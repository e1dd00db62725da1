//! ARMA mean model fitted by conditional least squares.
//!
//! `x_t = c + Σ θ_i x_{t−i} + ε_t + Σ β_j ε_{t−j}`; differencing and power
//! transforms are applied by the caller and recorded in `d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{numerical_hessian, std_errors_from_hessian, NelderMead};
use crate::stats;

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub c: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub innovation_variance: f64,
}

impl ArimaModel {
    pub fn is_stationary(&self) -> bool {
        roots_outside_unit_circle(&self.ar)
    }

    pub fn is_invertible(&self) -> bool {
        let neg: Vec<f64> = self.ma.iter().map(|b| -b).collect();
        roots_outside_unit_circle(&neg)
    }

    /// Residuals of `x` under this model, conditional on the first `start`
    /// samples and on zero pre-sample innovations.
    pub fn residuals(&self, x: &[f64], start: usize) -> Vec<f64> {
        css_residuals(x, self.c, &self.ar, &self.ma, start)
    }
}

/// True when every root of `1 − Σ a_i z^i` lies outside the unit circle,
/// i.e. every eigenvalue of the companion matrix lies inside it.
pub fn roots_outside_unit_circle(a: &[f64]) -> bool {
    let p = a.len();
    if p == 0 {
        return true;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (j, v) in a.iter().enumerate() {
        m[(0, j)] = *v;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().all(|z| z.norm() < 1.0 - 1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ArimaFit {
    pub model: ArimaModel,
    /// Residuals for `t = start..n`.
    pub residuals: Vec<f64>,
    pub start: usize,
    pub loglik: f64,
    pub aic: f64,
    /// Standard errors in the order `c, θ_1..θ_p, β_1..β_q`.
    pub std_errors: Option<Vec<f64>>,
    pub iterations: usize,
}

fn css_residuals(x: &[f64], c: f64, ar: &[f64], ma: &[f64], start: usize) -> Vec<f64> {
    let n = x.len();
    let mut e = vec![0.0; n];
    for t in start..n {
        let mut v = x[t] - c;
        for (i, a) in ar.iter().enumerate() {
            v -= a * x[t - i - 1];
        }
        for (j, b) in ma.iter().enumerate() {
            if t > j {
                v -= b * e[t - j - 1];
            }
        }
        e[t] = v;
    }
    e.split_off(start)
}

fn sum_squares(x: &[f64], c: f64, ar: &[f64], ma: &[f64], start: usize) -> f64 {
    css_residuals(x, c, ar, ma, start).iter().map(|e| e * e).sum()
}

/// Least squares through the normal equations.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<DVector<f64>> {
    let k = rows.first()?.len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for (row, &v) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += row[i] * v;
            for j in 0..=i {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    match xtx.clone().cholesky() {
        Some(ch) => Some(ch.solve(&xty)),
        None => xtx.lu().solve(&xty),
    }
}

fn ar_ols(x: &[f64], m: usize) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let rows: Vec<Vec<f64>> =
        (m..x.len()).map(|t| std::iter::once(1.0).chain((1..=m).map(|i| x[t - i])).collect()).collect();
    let beta = least_squares(&rows, &x[m..])?;
    let c = beta[0];
    let a: Vec<f64> = beta.iter().skip(1).cloned().collect();
    let mut e = vec![0.0; x.len()];
    for t in m..x.len() {
        e[t] = x[t] - c - a.iter().enumerate().map(|(i, v)| v * x[t - i - 1]).sum::<f64>();
    }
    Some((c, a, e))
}

/// Hannan–Rissanen two-stage regression start.
fn initial_estimate(x: &[f64], p: usize, q: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mean = stats::mean(x);
    if p == 0 && q == 0 {
        return (mean, vec![], vec![]);
    }
    let fallback = (mean, vec![0.0; p], vec![0.0; q]);
    let m = (2 * (p + q)).max(10).min(x.len() / 20).max(p.max(q) + 1);
    let e = if q > 0 {
        match ar_ols(x, m) {
            Some((_, _, e)) => e,
            None => return fallback,
        }
    } else {
        vec![0.0; x.len()]
    };
    let start = if q > 0 { m + q } else { p };
    let rows: Vec<Vec<f64>> = (start..x.len())
        .map(|t| std::iter::once(1.0).chain((1..=p).map(|i| x[t - i])).chain((1..=q).map(|j| e[t - j])).collect())
        .collect();
    let Some(beta) = least_squares(&rows, &x[start..]) else { return fallback };
    let mut ar: Vec<f64> = beta.iter().skip(1).take(p).cloned().collect();
    let mut ma: Vec<f64> = beta.iter().skip(1 + p).take(q).cloned().collect();
    let mut c = beta[0];
    for _ in 0..60 {
        let ok_ar = roots_outside_unit_circle(&ar);
        let ok_ma = roots_outside_unit_circle(&ma.iter().map(|b| -b).collect::<Vec<_>>());
        if ok_ar && ok_ma {
            break;
        }
        if !ok_ar {
            ar.iter_mut().for_each(|v| *v *= 0.9);
        }
        if !ok_ma {
            ma.iter_mut().for_each(|v| *v *= 0.9);
        }
        c = mean * (1.0 - ar.iter().sum::<f64>());
    }
    (c, ar, ma)
}

/// Fits ARMA(p, q) conditional on the first `max(p, q)` samples.
pub fn fit_arima(x: &[f64], p: usize, q: usize) -> Result<ArimaFit> {
    fit_arima_from(x, p, q, p.max(q))
}

/// Fits ARMA(p, q) conditional on the first `start ≥ max(p, q)` samples.
pub fn fit_arima_from(x: &[f64], p: usize, q: usize, start: usize) -> Result<ArimaFit> {
    if p > MAX_ORDER || q > MAX_ORDER {
        return Err(Error::invalid(format!("ARMA orders are limited to {MAX_ORDER}, got p={p}, q={q}")));
    }
    let need = 50 * (p + q + 1);
    if x.len() < need {
        return Err(Error::insufficient(format!("ARMA({p},{q}) needs at least {need} samples, got {}", x.len())));
    }
    if start < p.max(q) || start >= x.len() {
        return Err(Error::invalid("conditioning start must be at least max(p, q)"));
    }
    let n_eff = (x.len() - start) as f64;
    let split = |v: &[f64]| (v[0], v[1..=p].to_vec(), v[p + 1..].to_vec());
    let objective = |v: &[f64]| {
        let (c, ar, ma) = split(v);
        if !roots_outside_unit_circle(&ar) || !roots_outside_unit_circle(&ma.iter().map(|b| -b).collect::<Vec<_>>()) {
            return f64::INFINITY;
        }
        0.5 * n_eff * (sum_squares(x, c, &ar, &ma, start) / n_eff).ln()
    };

    let (c0, ar0, ma0) = initial_estimate(x, p, q);
    let x0: Vec<f64> = std::iter::once(c0).chain(ar0).chain(ma0).collect();
    let sd = stats::std_dev(x).max(1e-12);
    let steps: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 { 0.05 * sd + 0.05 * v.abs() } else { 0.02 + 0.05 * v.abs() })
        .collect();
    let (best, iterations) = if p + q == 0 {
        (x0.clone(), 0)
    } else {
        let res = NelderMead { max_iter: 2000, ftol: 1e-10, restarts: 3 }.minimize(objective, &x0, &steps);
        if !res.value.is_finite() {
            return Err(Error::estimation(format!(
                "ARMA({p},{q}) objective is not finite at the best point {:?}",
                res.x
            )));
        }
        if !res.converged {
            return Err(Error::estimation(format!(
                "ARMA({p},{q}) did not converge in {} iterations; best-so-far parameters {:?}, objective {}",
                res.iterations, res.x, res.value
            )));
        }
        (res.x, res.iterations)
    };
    let (c, ar, ma) = split(&best);
    let residuals = css_residuals(x, c, &ar, &ma, start);
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    let var = ss / n_eff;
    if !(var > 0.0) {
        return Err(Error::estimation("ARMA fit has zero residual variance"));
    }
    let loglik = -0.5 * n_eff * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
    let std_errors = std_errors_from_hessian(&numerical_hessian(objective, &best));
    let model = ArimaModel { p, d: 0, q, c, ar, ma, innovation_variance: var };
    if !model.is_stationary() || !model.is_invertible() {
        return Err(Error::estimation("ARMA optimum violates stationarity or invertibility"));
    }
    Ok(ArimaFit {
        model,
        residuals,
        start,
        loglik,
        aic: 2.0 * (p + q + 2) as f64 - 2.0 * loglik,
        std_errors,
        iterations,
    })
}

/// Minimum-AIC order over `p ≤ max_p`, `q ≤ max_q`, all conditioned on the
/// same leading samples so the likelihoods are comparable.
pub fn select_arima_order(x: &[f64], max_p: usize, max_q: usize) -> Result<ArimaFit> {
    let start = max_p.max(max_q);
    let mut best: Option<ArimaFit> = None;
    let mut last_err = None;
    for p in 0..=max_p {
        for q in 0..=max_q {
            match fit_arima_from(x, p, q, start) {
                Ok(f) => {
                    if best.as_ref().is_none_or(|b| f.aic < b.aic) {
                        best = Some(f);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::estimation("no ARMA order could be fitted")))
}
