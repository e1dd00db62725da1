//! Threshold selection by the mean-residual-life and parameter-stability
//! methods.
//!
//! Both methods look for the highest threshold `u0` below which a curve in
//! `u` is linear. Linearity of a prefix `{u ≤ candidate}` is judged by a
//! weighted coefficient of determination that discounts the scatter expected
//! from sampling noise alone; see [`noise_corrected_r2`].

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, GpdFit};
use crate::stats;

pub const DEFAULT_GRID_POINTS: usize = 40;
pub const DEFAULT_K_MIN: usize = 30;
pub const DEFAULT_R2_MIN: f64 = 0.95;
/// Quantile of the noise-only χ² law granted to weighted sums of squares.
pub const NOISE_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct ThresholdConfig {
    pub grid_points: usize,
    pub k_min: usize,
    pub r2_min: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { grid_points: DEFAULT_GRID_POINTS, k_min: DEFAULT_K_MIN, r2_min: DEFAULT_R2_MIN }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::invalid("threshold grid needs at least 3 points"));
        }
        if !(self.r2_min > 0.0 && self.r2_min < 1.0) {
            return Err(Error::invalid(format!("r2_min must lie in (0, 1), got {}", self.r2_min)));
        }
        if self.k_min < 2 {
            return Err(Error::invalid("k_min must be at least 2"));
        }
        Ok(())
    }
}

/// `n_points` equally spaced thresholds from one step above the sample
/// minimum up to the sample mean.
pub fn threshold_grid(samples: &[f64], n_points: usize) -> Result<Vec<f64>> {
    if n_points < 3 {
        return Err(Error::invalid(format!("threshold grid needs n_points >= 3, got {n_points}")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("threshold grid of an empty series"));
    }
    let (lo, _) = stats::min_max(samples);
    let hi = stats::mean(samples);
    if !(hi > lo) {
        return Err(Error::invalid("degenerate series: minimum equals mean"));
    }
    let step = (hi - lo) / n_points as f64;
    Ok((1..=n_points).map(|i| if i == n_points { hi } else { lo + i as f64 * step }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least-squares line with `R² = 1 − SS_res/SS_tot`.
///
/// A constant response is a perfect line and gets `R² = 1`.
pub fn fit_line_r2(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("line fit needs at least 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let xb = points.iter().map(|p| p.0).sum::<f64>() / n;
    let yb = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xb).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("line fit with all x equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xb) * (p.1 - yb)).sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - yb).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot <= f64::EPSILON * yb.abs().max(1.0) * n { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(LineFit { slope, intercept, r2 })
}

/// Weighted line fit whose `R²` only counts scatter beyond sampling noise.
///
/// With weights `1/se²` the residual and total sums of squares of a straight
/// line observed with noise follow χ² laws with `m − 2` and `m − 1` degrees
/// of freedom. Each sum is reduced by its [`NOISE_QUANTILE`] quantile before
/// forming the ratio: residual scatter within noise gives `1`, and a curve
/// with no signal beyond noise but excess residual gives `0`.
pub fn noise_corrected_r2(x: &[f64], y: &[f64], se: &[f64]) -> Result<LineFit> {
    let m = x.len();
    if m < 3 || y.len() != m || se.len() != m {
        return Err(Error::invalid("weighted line fit needs >= 3 points of matching length"));
    }
    if se.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("standard errors must be finite and > 0"));
    }
    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let xb = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let yb = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..m {
        sxx += w[i] * (x[i] - xb).powi(2);
        sxy += w[i] * (x[i] - xb) * (y[i] - yb);
    }
    if !(sxx > 0.0) {
        return Err(Error::invalid("line fit with all x equal"));
    }
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for i in 0..m {
        ss_tot += w[i] * (y[i] - yb).powi(2);
        ss_res += w[i] * (y[i] - intercept - slope * x[i]).powi(2);
    }
    let allowance = |df: usize| ChiSquared::new(df as f64).map(|d| d.inverse_cdf(NOISE_QUANTILE)).unwrap_or(0.0);
    let (n_res, n_tot) = (allowance(m - 2), allowance(m - 1));
    let r2 = if ss_res <= n_res {
        1.0
    } else if ss_tot - n_tot <= 0.0 {
        0.0
    } else {
        (1.0 - (ss_res - n_res) / (ss_tot - n_tot)).clamp(0.0, 1.0)
    };
    Ok(LineFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MrlPoint {
    pub u: f64,
    pub k: usize,
    pub mean_excess: f64,
    /// Standard error of the mean excess, `sd/√k`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MrlCurve {
    pub points: Vec<MrlPoint>,
    /// Grid thresholds dropped for having fewer than `k_min` excesses.
    pub excluded: Vec<f64>,
}

/// Sorted samples plus the excess counts at each threshold.
struct Tail<'a> {
    sorted: &'a [f64],
}

impl Tail<'_> {
    fn excesses(&self, u: f64) -> Vec<f64> {
        let k = self.sorted.partition_point(|&x| x < u);
        self.sorted[..k].iter().map(|&x| u - x).collect()
    }
}

/// Mean-residual-life curve `(u, e(u))` over the grid.
pub fn mrl_curve(samples: &[f64], grid: &[f64], k_min: usize) -> Result<MrlCurve> {
    let sorted = stats::sorted(samples);
    let tail = Tail { sorted: &sorted };
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &u in grid {
        let y = tail.excesses(u);
        if y.len() < k_min.max(2) {
            excluded.push(u);
            continue;
        }
        let k = y.len();
        points.push(MrlPoint { u, k, mean_excess: stats::mean(&y), se: stats::std_dev(&y) / (k as f64).sqrt() });
    }
    if points.len() < 3 {
        return Err(Error::insufficient(format!(
            "mean residual life curve has {} thresholds with at least {k_min} excesses; 3 are needed",
            points.len()
        )));
    }
    Ok(MrlCurve { points, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    TooFewExcesses { k: usize },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ScanRecord {
    pub u: f64,
    pub k: usize,
    pub mean_excess: Option<f64>,
    pub mean_excess_se: Option<f64>,
    pub fit: Option<GpdFit>,
    pub status: FitStatus,
}

impl ScanRecord {
    pub fn xi(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.xi())
    }

    pub fn sigma_star(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.modified_scale())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ThresholdScan {
    pub n: usize,
    pub k_min: usize,
    pub records: Vec<ScanRecord>,
}

/// Per-threshold GPD fits for the parameter-stability method.
///
/// Failed fits are recorded with their reason; only a scan without a single
/// successful fit is an error.
pub fn stability_curves(samples: &[f64], grid: &[f64], k_min: usize) -> Result<ThresholdScan> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("threshold grid must be strictly increasing"));
    }
    let sorted = stats::sorted(samples);
    let tail = Tail { sorted: &sorted };
    let n = samples.len();
    let records: Vec<ScanRecord> = grid
        .par_iter()
        .map(|&u| {
            let y = tail.excesses(u);
            let k = y.len();
            let (me, me_se) = if k >= 2 {
                (Some(stats::mean(&y)), Some(stats::std_dev(&y) / (k as f64).sqrt()))
            } else {
                (None, None)
            };
            let (fit, status) = if k < k_min.max(2) {
                (None, FitStatus::TooFewExcesses { k })
            } else {
                match fit_gpd(&y, n, u) {
                    Ok(f) => (Some(f), FitStatus::Ok),
                    Err(e) => (None, FitStatus::Failed { message: e.to_string() }),
                }
            };
            ScanRecord { u, k, mean_excess: me, mean_excess_se: me_se, fit, status }
        })
        .collect();
    if records.iter().all(|r| r.fit.is_none()) {
        return Err(Error::estimation("no threshold on the grid produced a GPD fit"));
    }
    Ok(ThresholdScan { n, k_min, records })
}

/// Linearity of `ξ̂` and `σ*` over a prefix of successful fits.
///
/// Standard errors come from the expected information under the hypothesis
/// that every threshold in the prefix shares the parameters of the largest
/// sample in it (the top threshold).
fn stability_prefix(fits: &[&GpdFit]) -> Result<(LineFit, LineFit)> {
    let top = fits.last().ok_or_else(|| Error::invalid("empty prefix"))?;
    let xi = top.xi();
    let star = top.modified_scale();
    let one = (1.0 + xi).max(1e-6);
    let mut u = Vec::with_capacity(fits.len());
    let (mut xs, mut ss, mut se_x, mut se_s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for f in fits {
        let k = f.k as f64;
        let sigma_u = (star - xi * f.u()).max(1e-9);
        let vx = one * one / k;
        let vs = 2.0 * sigma_u * sigma_u * one / k;
        let c = -sigma_u * one / k;
        let v_star = (vs + f.u() * f.u() * vx + 2.0 * f.u() * c).max(1e-300);
        u.push(f.u());
        xs.push(f.xi());
        ss.push(f.modified_scale());
        se_x.push(vx.sqrt());
        se_s.push(v_star.sqrt());
    }
    Ok((noise_corrected_r2(&u, &xs, &se_x)?, noise_corrected_r2(&u, &ss, &se_s)?))
}

fn mrl_prefix(points: &[MrlPoint]) -> Result<LineFit> {
    let u: Vec<f64> = points.iter().map(|p| p.u).collect();
    let e: Vec<f64> = points.iter().map(|p| p.mean_excess).collect();
    let se: Vec<f64> = points.iter().map(|p| p.se.max(1e-12)).collect();
    noise_corrected_r2(&u, &e, &se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mrl,
    Stability,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStatus {
    Decided,
    /// The whole curve is linear, so no threshold stands out.
    Deferred,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ThresholdDecision {
    pub u0: Option<f64>,
    pub method: Method,
    pub status: DecisionStatus,
    pub r2_mrl: Option<f64>,
    pub r2_xi: Option<f64>,
    pub r2_sigma_star: Option<f64>,
    pub rationale: String,
}

/// Scans prefixes upward from three points; returns the index of the last
/// passing prefix end and its statistics.
fn scan_prefixes<T>(n: usize, eval: impl Fn(usize) -> Result<T>, pass: impl Fn(&T) -> bool) -> Option<(usize, T)> {
    let mut last = None;
    for end in 3..=n {
        match eval(end) {
            Ok(stat) if pass(&stat) => last = Some((end - 1, stat)),
            _ => break,
        }
    }
    last
}

/// Mean-residual-life decision.
///
/// `u0` is the top of the longest linear prefix. A curve that is linear
/// throughout is deferred to the stability method.
pub fn mrl_threshold(curve: &MrlCurve, r2_min: f64) -> ThresholdDecision {
    let pts = &curve.points;
    let best = scan_prefixes(pts.len(), |end| mrl_prefix(&pts[..end]), |f| f.r2 >= r2_min);
    let mut d = ThresholdDecision {
        u0: None,
        method: Method::Mrl,
        status: DecisionStatus::Failed,
        r2_mrl: None,
        r2_xi: None,
        r2_sigma_star: None,
        rationale: String::new(),
    };
    match best {
        None => {
            d.rationale = format!("mean excess is not linear (R² < {r2_min}) even over the lowest three thresholds")
        }
        Some((i, f)) if i + 1 == pts.len() => {
            d.status = DecisionStatus::Deferred;
            d.r2_mrl = Some(f.r2);
            d.rationale =
                "mean excess is linear over the whole grid; the optimum threshold cannot be distinguished".into();
        }
        Some((i, f)) => {
            d.status = DecisionStatus::Decided;
            d.u0 = Some(pts[i].u);
            d.r2_mrl = Some(f.r2);
            d.rationale = format!("mean excess linear up to u = {:.6} and not beyond", pts[i].u);
        }
    }
    d
}

/// Parameter-stability decision: both `ξ̂(u)` and `σ*(u)` must be linear.
pub fn stability_threshold(scan: &ThresholdScan, r2_min: f64) -> ThresholdDecision {
    let fits: Vec<&GpdFit> = scan.records.iter().filter_map(|r| r.fit.as_ref()).collect();
    let best =
        scan_prefixes(fits.len(), |end| stability_prefix(&fits[..end]), |(a, b)| a.r2 >= r2_min && b.r2 >= r2_min);
    let mut d = ThresholdDecision {
        u0: None,
        method: Method::Stability,
        status: DecisionStatus::Failed,
        r2_mrl: None,
        r2_xi: None,
        r2_sigma_star: None,
        rationale: String::new(),
    };
    match best {
        None if fits.len() < 3 => d.rationale = format!("only {} successful fits; 3 are needed", fits.len()),
        None => {
            d.rationale =
                format!("shape and modified scale are not linear (R² < {r2_min}) over the lowest three thresholds")
        }
        Some((i, (a, b))) => {
            d.status = DecisionStatus::Decided;
            d.u0 = Some(fits[i].u());
            d.r2_xi = Some(a.r2);
            d.r2_sigma_star = Some(b.r2);
            d.rationale = if i + 1 == fits.len() {
                "shape and modified scale are linear over the whole grid; u0 is the top of the grid".into()
            } else {
                format!("shape and modified scale linear up to u = {:.6} and not beyond", fits[i].u())
            };
        }
    }
    d
}

/// Per-row prefix statistics, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PrefixR2 {
    pub mrl: Option<f64>,
    pub xi: Option<f64>,
    pub sigma_star: Option<f64>,
}

impl ThresholdScan {
    pub fn grid(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.u).collect()
    }

    fn mrl_points(&self, k_min: usize) -> Vec<MrlPoint> {
        self.records
            .iter()
            .filter(|r| r.k >= k_min.max(2))
            .filter_map(|r| Some(MrlPoint { u: r.u, k: r.k, mean_excess: r.mean_excess?, se: r.mean_excess_se? }))
            .collect()
    }

    /// Mean-residual-life curve from the same thresholds.
    pub fn mrl_curve(&self) -> Result<MrlCurve> {
        let points = self.mrl_points(self.k_min);
        if points.len() < 3 {
            return Err(Error::insufficient(format!(
                "mean residual life curve has {} thresholds with at least {} excesses; 3 are needed",
                points.len(),
                self.k_min
            )));
        }
        let excluded = self.records.iter().filter(|r| r.k < self.k_min.max(2)).map(|r| r.u).collect();
        Ok(MrlCurve { points, excluded })
    }

    /// Linearity statistics of every prefix ending at each record.
    pub fn prefix_r2(&self) -> Vec<PrefixR2> {
        let pts = self.mrl_points(self.k_min);
        let fits: Vec<&GpdFit> = self.records.iter().filter_map(|r| r.fit.as_ref()).collect();
        self.records
            .iter()
            .map(|r| {
                let mut out = PrefixR2::default();
                let np = pts.iter().take_while(|p| p.u <= r.u).count();
                if np >= 3 && pts[np - 1].u == r.u {
                    out.mrl = mrl_prefix(&pts[..np]).ok().map(|f| f.r2);
                }
                let nf = fits.iter().take_while(|f| f.u() <= r.u).count();
                if nf >= 3 && r.fit.is_some() {
                    if let Ok((a, b)) = stability_prefix(&fits[..nf]) {
                        out.xi = Some(a.r2);
                        out.sigma_star = Some(b.r2);
                    }
                }
                out
            })
            .collect()
    }

    /// Writes the scan as CSV for plotting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "u",
            "k",
            "mean_excess",
            "mean_excess_se",
            "xi",
            "se_xi",
            "sigma",
            "sigma_star",
            "se_sigma_star",
            "status",
            "r2_mrl_prefix",
            "r2_xi_prefix",
            "r2_sigma_star_prefix",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for (r, p) in self.records.iter().zip(self.prefix_r2()) {
            let f = r.fit.as_ref();
            let status = match &r.status {
                FitStatus::Ok => "ok".to_string(),
                FitStatus::TooFewExcesses { .. } => "too_few_excesses".to_string(),
                FitStatus::Failed { message } => format!("failed: {message}"),
            };
            w.write_record([
                format!("{}", r.u),
                r.k.to_string(),
                opt(r.mean_excess),
                opt(r.mean_excess_se),
                opt(f.map(|f| f.xi())),
                opt(f.and_then(|f| f.se_xi)),
                opt(f.map(|f| f.sigma())),
                opt(f.map(|f| f.modified_scale())),
                opt(f.and_then(|f| f.se_modified_scale())),
                status,
                opt(p.mrl),
                opt(p.xi),
                opt(p.sigma_star),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ThresholdSelection {
    pub decision: ThresholdDecision,
    pub mrl: ThresholdDecision,
    pub stability: ThresholdDecision,
    pub scan: Option<ThresholdScan>,
}

/// Runs both methods and combines them.
///
/// When both decide, the lower threshold wins. A deferred or failed method
/// leaves the decision to the other one; when neither decides, `u0` is
/// `None`. Only invalid configuration and degenerate input are errors.
pub fn select_threshold(samples: &[f64], config: &ThresholdConfig) -> Result<ThresholdSelection> {
    config.validate()?;
    let grid = threshold_grid(samples, config.grid_points)?;
    let failed = |method, why: String| ThresholdDecision {
        u0: None,
        method,
        status: DecisionStatus::Failed,
        r2_mrl: None,
        r2_xi: None,
        r2_sigma_star: None,
        rationale: why,
    };
    let scan = match stability_curves(samples, &grid, config.k_min) {
        Ok(s) => s,
        Err(e) => {
            let why = format!("threshold scan failed: {e}");
            return Ok(ThresholdSelection {
                decision: failed(Method::Combined, why.clone()),
                mrl: failed(Method::Mrl, why.clone()),
                stability: failed(Method::Stability, why),
                scan: None,
            });
        }
    };
    let mrl = match scan.mrl_curve() {
        Ok(curve) => mrl_threshold(&curve, config.r2_min),
        Err(e) => failed(Method::Mrl, e.to_string()),
    };
    let stability = stability_threshold(&scan, config.r2_min);
    let decision = combine(&scan, &mrl, &stability);
    Ok(ThresholdSelection { decision, mrl, stability, scan: Some(scan) })
}

fn combine(scan: &ThresholdScan, mrl: &ThresholdDecision, stab: &ThresholdDecision) -> ThresholdDecision {
    let decided = |d: &ThresholdDecision| d.status == DecisionStatus::Decided;
    match (decided(mrl), decided(stab)) {
        (true, true) => {
            let u0 = mrl.u0.unwrap().min(stab.u0.unwrap());
            let row = scan.records.iter().position(|r| r.u == u0);
            let p = row.map(|i| scan.prefix_r2()[i]).unwrap_or_default();
            ThresholdDecision {
                u0: Some(u0),
                method: Method::Combined,
                status: DecisionStatus::Decided,
                r2_mrl: p.mrl,
                r2_xi: p.xi,
                r2_sigma_star: p.sigma_star,
                rationale: format!(
                    "both methods decided (mean residual life u0 = {:.6}, stability u0 = {:.6}); the lower one is kept",
                    mrl.u0.unwrap(),
                    stab.u0.unwrap()
                ),
            }
        }
        (true, false) => {
            ThresholdDecision { rationale: format!("{}; stability: {}", mrl.rationale, stab.rationale), ..mrl.clone() }
        }
        (false, true) => ThresholdDecision {
            rationale: format!("mean residual life: {}; {}", mrl.rationale, stab.rationale),
            ..stab.clone()
        },
        (false, false) => ThresholdDecision {
            u0: None,
            method: Method::Combined,
            status: DecisionStatus::Failed,
            r2_mrl: None,
            r2_xi: None,
            r2_sigma_star: None,
            rationale: format!("mean residual life: {}; stability: {}", mrl.rationale, stab.rationale),
        },
    }
}
