use std::io::Write;

use serde::{Deserialize, Serialize};

use super::composite::{composite_from_lower, fit_composite, BandwidthPolicy, CompositeCdfModel};
use super::parametric::{fit_parametric, Family, ParametricFit};
use crate::error::{Error, Result};
use crate::gpd::GpdFit;
use crate::stats;
use crate::threshold::csv_err;

/// `(x_(i), i/n)` for the sorted samples.
pub fn empirical_cdf_points(samples: &[f64]) -> Vec<(f64, f64)> {
    let n = samples.len() as f64;
    stats::sorted(samples).into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

/// Root-mean-square gap between `model` and the empirical points whose
/// empirical CDF is at most `max_cdf`.
pub fn rmse_cdf<F: Fn(f64) -> f64>(model: F, points: &[(f64, f64)], max_cdf: f64) -> Result<f64> {
    let (mut ss, mut count) = (0.0, 0usize);
    for &(x, f) in points.iter().filter(|(_, f)| *f <= max_cdf) {
        ss += (model(x) - f).powi(2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid(format!("no empirical points with CDF <= {max_cdf}")));
    }
    Ok((ss / count as f64).sqrt())
}

/// Which observations the extrapolation baselines are fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum FitRegion {
    /// Observations whose empirical CDF is at least `min_cdf`.
    CdfAbove { min_cdf: f64 },
    /// The first `count` observations in time order.
    FirstSamples { count: usize },
}

impl FitRegion {
    pub fn select(&self, samples: &[f64]) -> Vec<f64> {
        match *self {
            FitRegion::CdfAbove { min_cdf } => {
                let sorted = stats::sorted(samples);
                let skip = ((min_cdf * sorted.len() as f64).ceil() as usize).saturating_sub(1);
                sorted[skip.min(sorted.len())..].to_vec()
            }
            FitRegion::FirstSamples { count } => samples[..count.min(samples.len())].to_vec(),
        }
    }
}

/// How the series maps to linear power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PowerScale {
    Db,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct CompareConfig {
    /// Tail fraction of the composite when no lower fit is supplied.
    pub tail_fraction: f64,
    pub bandwidth: BandwidthPolicy,
    pub families: Vec<Family>,
    pub region: FitRegion,
    pub rmse_max_cdf: f64,
    pub scale: PowerScale,
    pub table_points: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            tail_fraction: 0.05,
            bandwidth: BandwidthPolicy::Silverman,
            families: vec![Family::Weibull, Family::Rician],
            region: FitRegion::CdfAbove { min_cdf: 1e-3 },
            rmse_max_cdf: 1e-2,
            scale: PowerScale::Db,
            table_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RmseRow {
    pub model: String,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct CompareRow {
    pub power: f64,
    pub empirical: f64,
    pub composite: f64,
    pub baselines: Vec<f64>,
}

/// Empirical, composite and extrapolated-baseline CDFs of normalized power.
#[derive(Debug, Clone, PartialEq, Serialize, schemars::JsonSchema)]
pub struct Comparison {
    /// Mean linear power used for normalization.
    pub mean_power: f64,
    pub composite: CompositeCdfModel,
    pub baselines: Vec<ParametricFit>,
    pub failed: Vec<(Family, String)>,
    pub rmse: Vec<RmseRow>,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["power".to_string(), "empirical".into(), "composite".into()];
        header.extend(self.baselines.iter().map(|b| b.family.name().to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.power.to_string(), r.empirical.to_string(), r.composite.to_string()];
            rec.extend(r.baselines.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn baseline_cdf(fit: &ParametricFit, p: f64) -> f64 {
    if fit.family.on_amplitude() {
        fit.cdf(p.max(0.0).sqrt())
    } else {
        fit.cdf(p)
    }
}

/// Compares the composite model against parametric families fitted to a
/// region of the data and extrapolated into the lower tail.
///
/// Everything is expressed in linear power divided by its sample mean.
pub fn compare(series: &[f64], lower_fit: Option<&GpdFit>, config: &CompareConfig) -> Result<Comparison> {
    if series.len() < 2 {
        return Err(Error::insufficient("comparison needs a series"));
    }
    let composite = match lower_fit {
        Some(f) => composite_from_lower(series, f, config.bandwidth)?,
        None => fit_composite(series, config.tail_fraction, config.bandwidth)?,
    };
    let linear: Vec<f64> = match config.scale {
        PowerScale::Db => series.iter().map(|v| 10f64.powf(v / 10.0)).collect(),
        PowerScale::Linear => series.to_vec(),
    };
    let mean_power = stats::mean(&linear);
    if !(mean_power > 0.0) {
        return Err(Error::invalid("mean linear power must be positive"));
    }
    let power: Vec<f64> = linear.iter().map(|v| v / mean_power).collect();
    let to_native = |p: f64| match config.scale {
        PowerScale::Db => 10.0 * (p * mean_power).log10(),
        PowerScale::Linear => p * mean_power,
    };
    let composite_cdf = |p: f64| if p <= 0.0 { 0.0 } else { composite.cdf(to_native(p)) };

    let region = config.region.select(&power);
    let mut baselines = Vec::new();
    let mut failed = Vec::new();
    for &family in &config.families {
        let data: Vec<f64> =
            if family.on_amplitude() { region.iter().map(|p| p.sqrt()).collect() } else { region.clone() };
        match fit_parametric(&data, family) {
            Ok(f) => baselines.push(f),
            Err(e) => failed.push((family, e.to_string())),
        }
    }

    let points = empirical_cdf_points(&power);
    let mut rmse =
        vec![RmseRow { model: "composite".into(), rmse: rmse_cdf(composite_cdf, &points, config.rmse_max_cdf).ok() }];
    for b in &baselines {
        rmse.push(RmseRow {
            model: b.family.name().into(),
            rmse: rmse_cdf(|p| baseline_cdf(b, p), &points, config.rmse_max_cdf).ok(),
        });
    }

    let n = points.len();
    let lo = (1.0 / n as f64).log10();
    let steps = config.table_points.max(2);
    let mut idx: Vec<usize> = (0..steps)
        .map(|i| {
            let q = 10f64.powf(lo * (1.0 - i as f64 / (steps - 1) as f64));
            ((q * n as f64).round() as usize).clamp(1, n) - 1
        })
        .collect();
    idx.dedup();
    let rows = idx
        .into_iter()
        .map(|i| {
            let (p, f) = points[i];
            CompareRow {
                power: p,
                empirical: f,
                composite: composite_cdf(p),
                baselines: baselines.iter().map(|b| baseline_cdf(b, p)).collect(),
            }
        })
        .collect();
    Ok(Comparison { mean_power, composite, baselines, failed, rmse, rows })
}
