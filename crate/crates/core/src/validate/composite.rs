use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd_at, gpd_cdf, GpdFit};
use crate::stats;

const JUNCTION_TOL: f64 = 1e-9;
const INTERIOR_NODES: usize = 4097;
const KERNEL_REACH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// `0.9·min(sd, IQR/1.34)·n^(−1/5)` over the interior samples.
    #[default]
    Silverman,
    Fixed {
        h: f64,
    },
}

fn silverman(sorted: &[f64]) -> f64 {
    let sd = stats::std_dev(sorted);
    let iqr = stats::quantile_sorted(sorted, 0.75) - stats::quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (sorted.len() as f64).powf(-0.2)
}

fn kernel_cdf(sorted: &[f64], h: f64, x: f64) -> f64 {
    let lo = sorted.partition_point(|&v| v < x - KERNEL_REACH * h);
    let hi = sorted.partition_point(|&v| v <= x + KERNEL_REACH * h);
    let mut s = lo as f64;
    for &v in &sorted[lo..hi] {
        s += 0.5 * erfc(-(x - v) / (h * std::f64::consts::SQRT_2));
    }
    s / sorted.len() as f64
}

/// Piecewise CDF: GPD lower tail, kernel-smoothed interior, GPD upper tail.
///
/// The upper fit is made on the negated series, so its threshold is `−u_high`.
#[derive(Debug, Clone, PartialEq, Serialize, schemars::JsonSchema)]
pub struct CompositeCdfModel {
    pub lower: GpdFit,
    pub upper: GpdFit,
    pub bandwidth: f64,
    pub u_low: f64,
    pub zeta_low: f64,
    pub u_high: f64,
    pub zeta_high: f64,
    #[serde(skip)]
    interior: Vec<f64>,
}

impl CompositeCdfModel {
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= self.u_low {
            let h = gpd_cdf(&self.lower.params, self.u_low - x).unwrap_or(1.0);
            return self.zeta_low * (1.0 - h);
        }
        if x >= self.u_high {
            let h = gpd_cdf(&self.upper.params, x - self.u_high).unwrap_or(1.0);
            return 1.0 - self.zeta_high * (1.0 - h);
        }
        let t = (x - self.u_low) / (self.u_high - self.u_low) * (INTERIOR_NODES - 1) as f64;
        let i = (t.floor() as usize).min(INTERIOR_NODES - 2);
        let w = t - i as f64;
        self.interior[i] * (1.0 - w) + self.interior[i + 1] * w
    }

    /// Largest jump across the two junctions.
    pub fn junction_gap(&self) -> f64 {
        let eps = 1e-12 * (1.0 + self.u_low.abs().max(self.u_high.abs()));
        let a = (self.cdf(self.u_low + eps) - self.zeta_low).abs();
        let b = (self.cdf(self.u_high - eps) - (1.0 - self.zeta_high)).abs();
        a.max(b)
    }
}

/// Stitches the two tail fits to a kernel CDF of `series`.
///
/// The kernel CDF is tabulated on the interior and rescaled affinely so it
/// passes through `(u_low, ζ_low)` and `(u_high, 1 − ζ_high)`.
pub fn build_composite(
    series: &[f64],
    lower_fit: &GpdFit,
    upper_fit: &GpdFit,
    bandwidth: BandwidthPolicy,
) -> Result<CompositeCdfModel> {
    let u_low = lower_fit.u();
    let u_high = -upper_fit.u();
    if !(u_low < u_high) {
        return Err(Error::invalid(format!("lower threshold {u_low} must lie below upper threshold {u_high}")));
    }
    let (zeta_low, zeta_high) = (lower_fit.zeta_u, upper_fit.zeta_u);
    if !(zeta_low + zeta_high < 1.0) {
        return Err(Error::invalid("tail fractions leave no interior"));
    }
    let sorted = stats::sorted(series);
    let inner: Vec<f64> = sorted.iter().cloned().filter(|&v| v >= u_low && v <= u_high).collect();
    let h = match bandwidth {
        BandwidthPolicy::Fixed { h } if h > 0.0 && h.is_finite() => h,
        BandwidthPolicy::Fixed { h } => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
        BandwidthPolicy::Silverman => {
            if inner.len() < 2 {
                return Err(Error::insufficient("fewer than two interior samples"));
            }
            silverman(&inner)
        }
    };
    if !(h > 0.0) {
        return Err(Error::construction("interior samples have zero spread"));
    }
    let step = (u_high - u_low) / (INTERIOR_NODES - 1) as f64;
    let raw: Vec<f64> = (0..INTERIOR_NODES)
        .into_par_iter()
        .map(|i| {
            let x = if i == INTERIOR_NODES - 1 { u_high } else { u_low + step * i as f64 };
            kernel_cdf(&sorted, h, x)
        })
        .collect();
    let (f0, f1) = (raw[0], raw[INTERIOR_NODES - 1]);
    if !(f1 > f0) {
        return Err(Error::construction(format!("kernel CDF is flat between {u_low} and {u_high}")));
    }
    let scale = (1.0 - zeta_high - zeta_low) / (f1 - f0);
    let mut interior: Vec<f64> = raw.iter().map(|f| zeta_low + (f - f0) * scale).collect();
    interior[0] = zeta_low;
    interior[INTERIOR_NODES - 1] = 1.0 - zeta_high;
    let model = CompositeCdfModel {
        lower: lower_fit.clone(),
        upper: upper_fit.clone(),
        bandwidth: h,
        u_low,
        zeta_low,
        u_high,
        zeta_high,
        interior,
    };
    let gap = model.junction_gap();
    if gap > JUNCTION_TOL {
        return Err(Error::construction(format!(
            "junction mismatch {gap:e} (lower ζ {zeta_low}, upper ζ {zeta_high}, h {h})"
        )));
    }
    Ok(model)
}

/// Fits both tails at the empirical `tail_fraction` quantiles and builds the composite.
pub fn fit_composite(series: &[f64], tail_fraction: f64, bandwidth: BandwidthPolicy) -> Result<CompositeCdfModel> {
    if !(tail_fraction > 0.0 && tail_fraction < 0.5) {
        return Err(Error::invalid(format!("tail fraction must lie in (0, 0.5), got {tail_fraction}")));
    }
    let sorted = stats::sorted(series);
    let u_low = stats::quantile_sorted(&sorted, tail_fraction);
    let u_high = stats::quantile_sorted(&sorted, 1.0 - tail_fraction);
    let lower = fit_gpd_at(series, u_low)?;
    let negated: Vec<f64> = series.iter().map(|v| -v).collect();
    let upper = fit_gpd_at(&negated, -u_high)?;
    build_composite(series, &lower, &upper, bandwidth)
}

/// Builds the composite around an existing lower-tail fit; the upper tail
/// carries the same exceedance fraction.
pub fn composite_from_lower(
    series: &[f64],
    lower_fit: &GpdFit,
    bandwidth: BandwidthPolicy,
) -> Result<CompositeCdfModel> {
    let zeta = lower_fit.zeta_u;
    if !(zeta > 0.0 && zeta < 0.5) {
        return Err(Error::invalid(format!("lower-tail fraction {zeta} leaves no interior")));
    }
    let sorted = stats::sorted(series);
    let u_high = stats::quantile_sorted(&sorted, 1.0 - zeta);
    let negated: Vec<f64> = series.iter().map(|v| -v).collect();
    let upper = fit_gpd_at(&negated, -u_high)?;
    build_composite(series, lower_fit, &upper, bandwidth)
}
