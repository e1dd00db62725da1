//! GJR-GARCH(1,1) conditional variance in the sign form
//!
//! `σ²_t = k + γ·σ²_{t−1} + φ·ε²_{t−1} + ψ·sgn(−ε_{t−1})·ε²_{t−1}`
//!
//! with `sgn(−ε) = 1` for `ε < 0`. Negative shocks load `φ + ψ`, positive
//! shocks `φ − ψ`. The variance stays positive when `k > 0`, `γ ≥ 0` and
//! `|ψ| ≤ φ`; for symmetric shocks it is covariance stationary when
//! `γ + φ < 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{numerical_hessian, std_errors_from_hessian, NelderMead};
use crate::stats;

pub const MIN_LENGTH: usize = 500;
/// `φ` and `|ψ|` below this count as no ARCH effect.
pub const BOUNDARY_TOL: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GarchModel {
    pub k: f64,
    pub gamma: f64,
    pub phi: f64,
    pub psi: f64,
}

impl GarchModel {
    pub fn persistence(&self) -> f64 {
        self.gamma + self.phi
    }

    pub fn unconditional_variance(&self) -> Option<f64> {
        (self.persistence() < 1.0).then(|| self.k / (1.0 - self.persistence()))
    }

    pub fn is_valid(&self) -> bool {
        self.k > 0.0 && self.gamma >= 0.0 && self.phi >= self.psi.abs() && self.persistence() < 1.0
    }

    /// Conditional variances for `ε`, starting from `σ²_0 = sigma0_sq`.
    pub fn variances(&self, eps: &[f64], sigma0_sq: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(eps.len());
        let mut v = sigma0_sq;
        for (t, _) in eps.iter().enumerate() {
            if t > 0 {
                let e = eps[t - 1];
                v = self.k + self.gamma * v + (self.phi + self.psi * sgn_neg(e)) * e * e;
            }
            out.push(v);
        }
        out
    }

    fn from_free(v: &[f64]) -> Self {
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        let persistence = logistic(v[1]);
        let share = logistic(v[2]);
        let phi = persistence * share;
        GarchModel { k: v[0].exp(), gamma: persistence * (1.0 - share), phi, psi: phi * v[3].tanh() }
    }
}

fn sgn_neg(e: f64) -> f64 {
    if e < 0.0 {
        1.0
    } else if e > 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn gaussian_loglik(model: &GarchModel, eps: &[f64], sigma0_sq: f64) -> f64 {
    let mut v = sigma0_sq;
    let mut total = 0.0;
    for t in 0..eps.len() {
        if t > 0 {
            let e = eps[t - 1];
            v = model.k + model.gamma * v + (model.phi + model.psi * sgn_neg(e)) * e * e;
        }
        if !(v > 0.0) || !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += v.ln() + eps[t] * eps[t] / v;
    }
    -0.5 * (total + eps.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GarchFit {
    pub model: GarchModel,
    pub sigma0_sq: f64,
    pub variances: Vec<f64>,
    pub loglik: f64,
    /// Observed-information standard errors of `(k, γ, φ, ψ)`.
    pub std_errors: Option<[f64; 4]>,
    /// `false` when `φ` and `ψ` both sit at the zero boundary.
    pub heteroskedastic: bool,
    pub note: Option<String>,
    pub iterations: usize,
}

/// Gaussian quasi-maximum-likelihood fit with `σ²_0` set to the sample
/// variance.
pub fn fit_garch(eps: &[f64]) -> Result<GarchFit> {
    if eps.len() < MIN_LENGTH {
        return Err(Error::insufficient(format!("GARCH fit needs at least {MIN_LENGTH} residuals, got {}", eps.len())));
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("residuals must be finite"));
    }
    let var = stats::variance(eps);
    if !(var > 0.0) {
        return Err(Error::invalid("residuals have zero variance"));
    }
    let objective = |v: &[f64]| -gaussian_loglik(&GarchModel::from_free(v), eps, var);
    let logit = |p: f64| (p / (1.0 - p)).ln();

    let mut starts = Vec::new();
    for persistence in [0.05, 0.5, 0.9, 0.97] {
        for share in [0.05, 0.2, 0.5] {
            starts.push(vec![(var * (1.0 - persistence)).ln(), logit(persistence), logit(share), 0.0]);
        }
    }
    let x0 = starts.into_iter().min_by(|a, b| objective(a).total_cmp(&objective(b))).expect("start grid is non-empty");
    let res = NelderMead { max_iter: 2000, ftol: 1e-10, restarts: 3 }.minimize(objective, &x0, &[0.2, 0.5, 0.5, 0.3]);
    if !res.value.is_finite() {
        return Err(Error::estimation("GARCH likelihood is not finite at any explored point"));
    }
    if !res.converged {
        return Err(Error::estimation(format!(
            "GARCH did not converge in {} iterations; best-so-far {:?}",
            res.iterations,
            GarchModel::from_free(&res.x)
        )));
    }
    let model = GarchModel::from_free(&res.x);
    let heteroskedastic = !(model.phi < BOUNDARY_TOL && model.psi.abs() < BOUNDARY_TOL);
    let std_errors = if heteroskedastic {
        let natural =
            |v: &[f64]| -gaussian_loglik(&GarchModel { k: v[0], gamma: v[1], phi: v[2], psi: v[3] }, eps, var);
        let x = [model.k, model.gamma, model.phi, model.psi];
        std_errors_from_hessian(&numerical_hessian(natural, &x)).map(|s| [s[0], s[1], s[2], s[3]])
    } else {
        None
    };
    Ok(GarchFit {
        model,
        sigma0_sq: var,
        variances: model.variances(eps, var),
        loglik: -res.value,
        std_errors,
        heteroskedastic,
        note: (!heteroskedastic).then(|| "no conditional heteroskedasticity detected".to_string()),
        iterations: res.iterations,
    })
}
