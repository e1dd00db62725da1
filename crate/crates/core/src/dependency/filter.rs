//! Two-stage ARMA then GJR-GARCH filtering to standardized residuals.

use serde::{Deserialize, Serialize};

use super::arima::{fit_arima, select_arima_order, ArimaModel};
use super::garch::{fit_garch, GarchModel};
use crate::error::{Error, Result};
use crate::series::DEFAULT_MAX_VIOLATION_FRACTION;
use crate::series::{difference, is_iid_with, power_transform, IidDiagnostics, PowerKind, TimeSeries, Unit};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct FilterConfig {
    pub transform: Option<PowerKind>,
    /// Number of lag-1 differencing passes.
    pub d: usize,
    pub allow_high_order_difference: bool,
    /// Fixed ARMA orders; when absent the order is chosen by AIC.
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub max_order: usize,
    pub max_lag: usize,
    pub max_violation_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            transform: None,
            d: 0,
            allow_high_order_difference: false,
            p: None,
            q: None,
            max_order: 3,
            max_lag: 50,
            max_violation_fraction: DEFAULT_MAX_VIOLATION_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FilteredResiduals {
    /// Standardized residuals `z_t = ε_t / σ_t`.
    pub z: Vec<f64>,
    pub residuals: Vec<f64>,
    pub conditional_sd: Vec<f64>,
    pub arima: ArimaModel,
    pub garch: GarchModel,
    pub garch_note: Option<String>,
    pub diagnostics: IidDiagnostics,
    pub z_mean: f64,
    pub z_variance: f64,
    /// `|mean| ≤ 0.05` and `|variance − 1| ≤ 0.1`.
    pub moments_ok: bool,
}

impl FilteredResiduals {
    pub fn iid(&self) -> bool {
        self.diagnostics.iid
    }

    pub fn series(&self, interval_ms: f64) -> Result<TimeSeries> {
        TimeSeries::new(self.z.clone(), interval_ms, Unit::Dimensionless)
    }
}

/// Applies the configured transforms, fits the mean and variance models and
/// standardizes. A non-white result is returned flagged rather than as an
/// error.
pub fn arima_garch_pipeline(series: &TimeSeries, config: &FilterConfig) -> Result<FilteredResiduals> {
    let mut s = series.clone();
    if let Some(kind) = config.transform {
        s = power_transform(&s, kind)?;
    }
    if config.d > 2 && !config.allow_high_order_difference {
        return Err(Error::invalid(format!("{} differencing passes exceed 2 without the override", config.d)));
    }
    for _ in 0..config.d {
        s = difference(&s, 1, config.allow_high_order_difference)?;
    }
    let x = s.samples();
    let mut arima = match (config.p, config.q) {
        (Some(p), Some(q)) => fit_arima(x, p, q)?,
        (p, q) => select_arima_order(x, p.unwrap_or(config.max_order), q.unwrap_or(config.max_order))?,
    };
    arima.model.d = config.d;
    let garch = fit_garch(&arima.residuals)?;
    let sd: Vec<f64> = garch.variances.iter().map(|v| v.sqrt()).collect();
    let z: Vec<f64> = arima.residuals.iter().zip(&sd).map(|(e, s)| e / s).collect();
    let lag = config.max_lag.min(z.len().saturating_sub(1)).max(1);
    let diagnostics = is_iid_with(&z, lag, config.max_violation_fraction)?;
    let z_mean = stats::mean(&z);
    let z_variance = stats::variance(&z);
    Ok(FilteredResiduals {
        moments_ok: z_mean.abs() <= 0.05 && (z_variance - 1.0).abs() <= 0.1,
        z,
        residuals: arima.residuals,
        conditional_sd: sd,
        arima: arima.model,
        garch: garch.model,
        garch_note: garch.note,
        diagnostics,
        z_mean,
        z_variance,
    })
}
