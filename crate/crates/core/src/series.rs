//! Time-series container, autocorrelation diagnostics and stationarity
//! transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Physical unit carried by a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub enum Unit {
    #[serde(rename = "dBm")]
    Dbm,
    #[serde(rename = "mW")]
    LinearMw,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl std::str::FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dbm" => Ok(Unit::Dbm),
            "mw" | "linear" | "linear-mw" => Ok(Unit::LinearMw),
            "dimensionless" | "none" => Ok(Unit::Dimensionless),
            other => Err(Error::invalid(format!("unknown unit '{other}'"))),
        }
    }
}

/// Ordered, finite samples with a sampling interval in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    interval_ms: f64,
    unit: Unit,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, interval_ms: f64, unit: Unit) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("time series must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        if !(interval_ms > 0.0 && interval_ms.is_finite()) {
            return Err(Error::invalid(format!("sampling interval must be > 0, got {interval_ms}")));
        }
        Ok(Self { samples, interval_ms, unit })
    }

    /// Dimensionless series with unit interval; handy for residuals and tests.
    pub fn from_values(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, 1.0, Unit::Dimensionless)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn interval_ms(&self) -> f64 {
        self.interval_ms
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Same interval, new samples and unit.
    pub fn derive(&self, samples: Vec<f64>, unit: Unit) -> Result<Self> {
        Self::new(samples, self.interval_ms, unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AcfResult {
    pub lags: Vec<usize>,
    pub correlations: Vec<f64>,
    /// Half-width of the 95% white-noise band, 1.96/√L.
    pub bound: f64,
}

impl AcfResult {
    pub fn violating_lags(&self) -> Vec<usize> {
        self.lags
            .iter()
            .zip(&self.correlations)
            .filter(|(&lag, c)| lag > 0 && c.abs() > self.bound)
            .map(|(&lag, _)| lag)
            .collect()
    }
}

/// Biased sample autocorrelation of the mean-removed series.
pub fn acf(series: &TimeSeries, max_lag: usize) -> Result<AcfResult> {
    acf_of(series.samples(), max_lag)
}

pub(crate) fn acf_of(x: &[f64], max_lag: usize) -> Result<AcfResult> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("autocorrelation needs at least 2 samples"));
    }
    if max_lag >= n {
        return Err(Error::invalid(format!("max_lag {max_lag} must be < series length {n}")));
    }
    let m = stats::mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    let scale = centered.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut correlations = Vec::with_capacity(max_lag + 1);
    correlations.push(1.0);
    // zero-variance guard: constant series is 1 at lag 0 and 0 elsewhere
    let degenerate = c0 <= (n as f64) * (scale * 1e-15).powi(2) || scale == 0.0;
    for lag in 1..=max_lag {
        if degenerate {
            correlations.push(0.0);
            continue;
        }
        let ck: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
        correlations.push((ck / c0).clamp(-1.0, 1.0));
    }
    Ok(AcfResult { lags: (0..=max_lag).collect(), correlations, bound: 1.96 / (n as f64).sqrt() })
}

/// ACF of the squared, mean-removed series.
pub fn acf_squared(series: &TimeSeries, max_lag: usize) -> Result<AcfResult> {
    acf_of(&squared_centered(series.samples()), max_lag)
}

fn squared_centered(x: &[f64]) -> Vec<f64> {
    let m = stats::mean(x);
    x.iter().map(|v| (v - m) * (v - m)).collect()
}

/// Default share of lags 1..L allowed outside the white-noise band.
pub const DEFAULT_MAX_VIOLATION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct IidDiagnostics {
    pub iid: bool,
    pub max_lag: usize,
    pub bound: f64,
    pub max_violation_fraction: f64,
    pub violating_lags: Vec<usize>,
    pub violating_lags_squared: Vec<usize>,
    pub violation_fraction: f64,
    pub violation_fraction_squared: f64,
}

/// Whiteness check on both the plain and squared ACF.
pub fn is_iid(series: &TimeSeries, max_lag: usize) -> Result<IidDiagnostics> {
    is_iid_with(series.samples(), max_lag, DEFAULT_MAX_VIOLATION_FRACTION)
}

pub fn is_iid_with(x: &[f64], max_lag: usize, max_violation_fraction: f64) -> Result<IidDiagnostics> {
    if max_lag < 1 {
        return Err(Error::invalid("is_iid needs max_lag >= 1"));
    }
    let plain = acf_of(x, max_lag)?;
    let squared = acf_of(&squared_centered(x), max_lag)?;
    let v1 = plain.violating_lags();
    let v2 = squared.violating_lags();
    let f1 = v1.len() as f64 / max_lag as f64;
    let f2 = v2.len() as f64 / max_lag as f64;
    Ok(IidDiagnostics {
        iid: f1 <= max_violation_fraction && f2 <= max_violation_fraction,
        max_lag,
        bound: plain.bound,
        max_violation_fraction,
        violating_lags: v1,
        violating_lags_squared: v2,
        violation_fraction: f1,
        violation_fraction_squared: f2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum PowerKind {
    Sqrt,
    Cbrt,
    Log,
}

impl std::str::FromStr for PowerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(PowerKind::Sqrt),
            "cbrt" => Ok(PowerKind::Cbrt),
            "log" => Ok(PowerKind::Log),
            other => Err(Error::invalid(format!("unknown power transform '{other}'"))),
        }
    }
}

/// Variance-stabilizing element-wise transform. Output is dimensionless.
pub fn power_transform(series: &TimeSeries, kind: PowerKind) -> Result<TimeSeries> {
    let x = series.samples();
    let bad = match kind {
        PowerKind::Sqrt => x.iter().position(|&v| v < 0.0),
        PowerKind::Log => x.iter().position(|&v| v <= 0.0),
        PowerKind::Cbrt => None,
    };
    if let Some(i) = bad {
        return Err(Error::invalid(format!("{kind:?} transform domain violated at index {i} (value {})", x[i])));
    }
    let out = x
        .iter()
        .map(|&v| match kind {
            PowerKind::Sqrt => v.sqrt(),
            PowerKind::Cbrt => v.cbrt(),
            PowerKind::Log => v.ln(),
        })
        .collect();
    series.derive(out, Unit::Dimensionless)
}

/// Lag-`d` difference `out_t = x_t − x_{t+d}`. Lags above 2 require
/// `allow_high_order`.
pub fn difference(series: &TimeSeries, d: usize, allow_high_order: bool) -> Result<TimeSeries> {
    if d == 0 {
        return Err(Error::invalid("difference lag must be >= 1"));
    }
    if d > 2 && !allow_high_order {
        return Err(Error::invalid(format!("difference lag {d} > 2 requires the high-order override")));
    }
    let x = series.samples();
    if x.len() <= d {
        return Err(Error::invalid(format!("series length {} must exceed lag {d}", x.len())));
    }
    let out = x[..x.len() - d].iter().zip(&x[d..]).map(|(a, b)| a - b).collect();
    series.derive(out, series.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(TimeSeries::from_values(vec![]).is_err());
        assert!(TimeSeries::from_values(vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::new(vec![1.0], 0.0, Unit::Dbm).is_err());
    }

    #[test]
    fn acf_lag_zero_is_one() {
        let r = acf(&ts(&[1.0, 3.0, 2.0, 5.0, 4.0]), 3).unwrap();
        assert_eq!(r.correlations[0], 1.0);
        assert_eq!(r.lags, vec![0, 1, 2, 3]);
        assert!((r.bound - 1.96 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn acf_rejects_long_lag() {
        assert!(acf(&ts(&[1.0, 2.0, 3.0]), 3).is_err());
    }

    #[test]
    fn constant_series_guard() {
        let r = acf(&ts(&[2.0; 10]), 4).unwrap();
        assert_eq!(r.correlations, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = is_iid_with(&[2.0; 10], 4, 0.05).unwrap();
        assert!(d.iid);
    }

    #[test]
    fn acf_hand_computed() {
        // centered: [-1.5, -0.5, 0.5, 1.5]; c0 = 5; c1 = 0.75 - 0.25 + 0.75 = 1.25
        let r = acf(&ts(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert!((r.correlations[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn iid_degenerate_length_two() {
        let d = is_iid(&ts(&[1.0, 2.0]), 1).unwrap();
        assert_eq!(d.max_lag, 1);
        assert!(d.violation_fraction <= 1.0);
    }

    #[test]
    fn power_transforms() {
        let s = power_transform(&ts(&[1.0, 4.0, 9.0]), PowerKind::Sqrt).unwrap();
        assert_eq!(s.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.unit(), Unit::Dimensionless);
        let e = std::f64::consts::E;
        let l = power_transform(&ts(&[1.0, e, e * e]), PowerKind::Log).unwrap();
        for (a, b) in l.samples().iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = power_transform(&ts(&[-8.0, 27.0]), PowerKind::Cbrt).unwrap();
        assert_eq!(c.samples(), &[-2.0, 3.0]);
        let err = power_transform(&ts(&[-1.0, 4.0]), PowerKind::Sqrt).unwrap_err();
        assert!(err.to_string().contains("index 0"));
        assert!(power_transform(&ts(&[1.0, 0.0]), PowerKind::Log).is_err());
    }

    #[test]
    fn differences() {
        assert_eq!(difference(&ts(&[5.0, 5.0, 5.0]), 1, false).unwrap().samples(), &[0.0, 0.0]);
        assert_eq!(difference(&ts(&[1.0, 2.0, 4.0]), 1, false).unwrap().samples(), &[-1.0, -2.0]);
        assert!(difference(&ts(&[1.0, 2.0, 4.0, 5.0, 6.0]), 3, false).is_err());
        assert_eq!(difference(&ts(&[1.0, 2.0, 4.0, 5.0]), 3, true).unwrap().samples(), &[-4.0]);
        assert!(difference(&ts(&[1.0, 2.0]), 2, false).is_err());
    }

    proptest! {
        #[test]
        fn acf_affine_invariant(
            xs in prop::collection::vec(-100.0f64..100.0, 8..64),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -50.0f64..50.0,
        ) {
            let (lo, hi) = stats::min_max(&xs);
            prop_assume!(hi - lo > 1e-3);
            let max_lag = xs.len() / 2;
            let r1 = acf_of(&xs, max_lag).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r2 = acf_of(&ys, max_lag).unwrap();
            for (c1, c2) in r1.correlations.iter().zip(&r2.correlations) {
                prop_assert!((c1 - c2).abs() < 1e-12);
                prop_assert!(c1.abs() <= 1.0);
            }
        }

        #[test]
        fn difference_of_constant_is_zero(c in -1e3f64..1e3, n in 3usize..50, d in 1usize..3) {
            let s = TimeSeries::from_values(vec![c; n]).unwrap();
            let out = difference(&s, d, false).unwrap();
            prop_assert_eq!(out.len(), n - d);
            prop_assert!(out.samples().iter().all(|&v| v == 0.0));
        }
    }
}
