use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, gpd_cdf, gpd_quantile, GpdFit, GpdParams};
use crate::stats;

const MIN_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Pp,
    Qq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ProbabilityPlotData {
    pub kind: PlotKind,
    /// `(empirical, modeled)`, sorted by the empirical coordinate.
    pub points: Vec<(f64, f64)>,
    pub max_abs_dev: f64,
    pub rmse_dev: f64,
}

impl ProbabilityPlotData {
    fn new(kind: PlotKind, points: Vec<(f64, f64)>) -> Self {
        let (mut max, mut ss) = (0.0f64, 0.0);
        for (e, m) in &points {
            let d = (e - m).abs();
            max = max.max(d);
            ss += d * d;
        }
        let rmse_dev = (ss / points.len() as f64).sqrt();
        Self { kind, points, max_abs_dev: max, rmse_dev }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < MIN_POINTS {
        return Err(Error::insufficient(format!("probability plots need at least {MIN_POINTS} tail samples, got {k}")));
    }
    Ok(())
}

/// PP plot of excesses: `(i/(k+1), H(y_(i)))` with `y` ascending.
pub fn pp_points(fit: &GpdFit, excesses: &[f64]) -> Result<ProbabilityPlotData> {
    let k = excesses.len();
    check_k(k)?;
    let mut y = excesses.to_vec();
    y.sort_by(f64::total_cmp);
    let points = y
        .iter()
        .enumerate()
        .map(|(i, &v)| Ok(((i + 1) as f64 / (k + 1) as f64, gpd_cdf(&fit.params, v)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbabilityPlotData::new(PlotKind::Pp, points))
}

/// Modeled lower-tail quantiles `u − H⁻¹(1 − i/(k+1))`, ascending in `i`.
pub fn modeled_tail_quantiles(params: &GpdParams, k: usize) -> Result<Vec<f64>> {
    (1..=k).map(|i| Ok(params.u - gpd_quantile(params, 1.0 - i as f64 / (k + 1) as f64)?)).collect()
}

/// QQ plot of the samples below `u` against the fitted lower-tail quantiles.
pub fn qq_points(fit: &GpdFit, series: &[f64], u: f64) -> Result<ProbabilityPlotData> {
    let mut x: Vec<f64> = series.iter().cloned().filter(|&v| v < u).collect();
    check_k(x.len())?;
    x.sort_by(f64::total_cmp);
    let params = GpdParams { u, ..fit.params };
    let modeled = modeled_tail_quantiles(&params, x.len())?;
    Ok(ProbabilityPlotData::new(PlotKind::Qq, x.into_iter().zip(modeled).collect()))
}

/// Simultaneous envelope for the ordered tail samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct QqEnvelope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub draws: usize,
}

impl QqEnvelope {
    /// Indices of sorted empirical values outside the envelope.
    pub fn outside(&self, qq: &ProbabilityPlotData) -> Vec<usize> {
        qq.points
            .iter()
            .enumerate()
            .filter(|(i, (e, _))| *e < self.lower[*i] || *e > self.upper[*i])
            .map(|(i, _)| i)
            .collect()
    }

    pub fn contains(&self, qq: &ProbabilityPlotData) -> bool {
        qq.points.len() == self.lower.len() && self.outside(qq).is_empty()
    }
}

/// Parametric-bootstrap envelope for a QQ plot of `k` tail samples.
///
/// Each draw simulates `k` excesses from the fit, refits the GPD and records
/// the sorted samples `u − y`. The band is global: each curve is scored by its
/// largest deviation from the pointwise median in units of the pointwise
/// 2.5% or 97.5% spread, and the band is the `level` quantile of that score.
pub fn qq_envelope(fit: &GpdFit, k: usize, draws: usize, level: f64, seed: u64) -> Result<QqEnvelope> {
    check_k(k)?;
    if draws < 20 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("envelope needs at least 20 draws and a level in (0, 1)"));
    }
    let p = fit.params;
    let curves: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let y: Vec<f64> = (0..k)
                .map(|_| {
                    let q: f64 = rand::Rng::random(&mut rng);
                    gpd_quantile(&p, q).unwrap_or(0.0)
                })
                .collect();
            // refit so the band carries estimation noise like the data does
            let refit = fit_gpd(&y, k, p.u).map(|f| f.params).unwrap_or(p);
            let shift = modeled_tail_quantiles(&refit, k).ok();
            let base = modeled_tail_quantiles(&p, k).ok();
            let mut x: Vec<f64> = y.iter().map(|v| p.u - v).collect();
            x.sort_by(f64::total_cmp);
            if let (Some(s), Some(b)) = (shift, base) {
                // express each curve against the fitted quantiles of the original model
                for i in 0..k {
                    x[i] += b[i] - s[i];
                }
            }
            x
        })
        .collect();

    let mut centre = vec![0.0; k];
    let mut below = vec![0.0; k];
    let mut above = vec![0.0; k];
    let mut column = vec![0.0; draws];
    for i in 0..k {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[i];
        }
        column.sort_by(f64::total_cmp);
        centre[i] = stats::quantile_sorted(&column, 0.5);
        below[i] = (centre[i] - stats::quantile_sorted(&column, 0.025)).max(f64::MIN_POSITIVE);
        above[i] = (stats::quantile_sorted(&column, 0.975) - centre[i]).max(f64::MIN_POSITIVE);
    }
    let mut t: Vec<f64> = curves
        .iter()
        .map(|c| (0..k).fold(0.0f64, |m, i| m.max((centre[i] - c[i]) / below[i]).max((c[i] - centre[i]) / above[i])))
        .collect();
    t.sort_by(f64::total_cmp);
    // the observed curve counts as one more exchangeable draw
    let rank = ((level * (draws + 1) as f64).ceil() as usize).clamp(1, draws);
    let scale = t[rank - 1];
    let lower = (0..k).map(|i| centre[i] - scale * below[i]).collect();
    let upper = (0..k).map(|i| centre[i] + scale * above[i]).collect();
    Ok(QqEnvelope { lower, upper, level, draws })
}
