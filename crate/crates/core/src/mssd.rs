//! Minimum sample size determination by two-step bootstrap and
//! Anderson–Darling normality of return levels.
//!
//! For each grid size `j`, `M` first-step sets (the data and `M − 1`
//! bootstrap copies) each give `K` second-step sets (the first `j` samples
//! and `K − 1` resamples of them). A GPD fit per set yields a return level;
//! the AD p-value of the `K` return levels is averaged over the `M` sets. The
//! smallest `j0` from which every larger size keeps the lower confidence
//! bound of that average above `alpha` is the minimum sufficient size.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, GpdFit, REGULARITY_BOUND};
use crate::stats;
use crate::threshold::{csv_err, DEFAULT_K_MIN};

/// Draws `size` samples with replacement.
pub fn bootstrap_resample<R: Rng + ?Sized>(source: &[f64], size: usize, rng: &mut R) -> Result<Vec<f64>> {
    if source.is_empty() {
        return Err(Error::invalid("cannot resample an empty series"));
    }
    if size == 0 {
        return Err(Error::invalid("resample size must be >= 1"));
    }
    Ok((0..size).map(|_| source[rng.random_range(0..source.len())]).collect())
}

fn ln_phi(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Anderson–Darling normality p-value with mean and variance estimated.
///
/// The statistic is scaled by `1 + 0.75/n + 2.25/n²` and mapped to a p-value
/// with the usual four-piece exponential-quadratic approximation.
pub fn ad_normality_p(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::invalid(format!("Anderson-Darling test needs at least 8 values, got {n}")));
    }
    let x = stats::sorted(sample);
    let mean = stats::mean(&x);
    let sd = stats::std_dev(&x);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::invalid("Anderson-Darling test of a sample with zero variance"));
    }
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        s += (2 * i + 1) as f64 * (ln_phi(z[i]) + ln_phi(-z[n - 1 - i]));
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a < 0.2 {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    } else if a < 0.34 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else if a < 0.6 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a < 10.0 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else {
        3.7e-24
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Where the GPD threshold sits inside each bootstrap set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// The empirical quantile carrying this lower-tail fraction.
    Quantile { fraction: f64 },
    /// The same absolute level in every set.
    Fixed { u: f64 },
}

impl ThresholdPolicy {
    fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Quantile { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(Error::invalid(format!("tail fraction must lie in (0, 1), got {fraction}")))
            }
            ThresholdPolicy::Fixed { u } if !u.is_finite() => Err(Error::invalid("fixed threshold must be finite")),
            _ => Ok(()),
        }
    }

    /// Fits the tail of `x` under this policy. `x` may be reordered.
    pub fn fit(&self, x: &mut [f64]) -> Result<GpdFit> {
        let j = x.len();
        let u = match *self {
            ThresholdPolicy::Fixed { u } => u,
            ThresholdPolicy::Quantile { fraction } => {
                let k = ((fraction * j as f64).round() as usize).max(2);
                if k >= j {
                    return Err(Error::insufficient(format!("{j} samples cannot hold {k} tail samples")));
                }
                let (below, kth, _) = x.select_nth_unstable_by(k, f64::total_cmp);
                let upper = *kth;
                let lower = below.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lower + upper)
            }
        };
        let y: Vec<f64> = x.iter().filter(|&&v| v < u).map(|&v| u - v).collect();
        fit_gpd(&y, j, u)
    }
}

/// How the spread of the `M` p-values enters the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BoundScale {
    /// `p̄ − t*·s/√(M − 1)`: lower confidence bound on the expected p-value.
    StandardError,
    /// `p̄ − t*·s`.
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct MssdConfig {
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m_sets: usize,
    #[serde(rename = "K")]
    pub k_sets: usize,
    /// Starting size; found by [`min_regular_size`] when absent.
    pub n0: Option<usize>,
    pub grid_points: usize,
    /// Return period of the tested return level.
    pub m: f64,
    pub confidence: f64,
    pub seed: u64,
    pub policy: ThresholdPolicy,
    pub bound_scale: BoundScale,
    pub max_missing_fraction: f64,
    pub k_min: usize,
}

impl Default for MssdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            m_sets: 20,
            k_sets: 50,
            n0: None,
            grid_points: 15,
            m: 1e6,
            confidence: 0.95,
            seed: 0,
            policy: ThresholdPolicy::Quantile { fraction: 0.1 },
            bound_scale: BoundScale::StandardError,
            max_missing_fraction: 0.2,
            k_min: DEFAULT_K_MIN,
        }
    }
}

impl MssdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.m_sets < 2 || self.k_sets < 8 {
            return Err(Error::invalid("MSSD needs M >= 2 and K >= 8 (the normality test needs 8 values)"));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("MSSD grid needs at least 2 sizes"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("confidence must lie in (0, 1)"));
        }
        if !(self.m > 1.0) {
            return Err(Error::invalid("return period must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.max_missing_fraction) {
            return Err(Error::invalid("max_missing_fraction must lie in [0, 1)"));
        }
        self.policy.validate()
    }

    /// One-sided critical value of the t law with `M − 1` degrees of freedom.
    pub fn t_star(&self) -> f64 {
        StudentsT::new(0.0, 1.0, (self.m_sets - 1) as f64).map(|t| t.inverse_cdf(self.confidence)).unwrap_or(f64::NAN)
    }
}

/// `grid_points` sizes equally spaced from `lo` to `hi`, deduplicated.
pub fn size_grid(lo: usize, hi: usize, grid_points: usize) -> Vec<usize> {
    if grid_points < 2 || lo >= hi {
        return vec![hi];
    }
    let mut g: Vec<usize> = (0..grid_points)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (grid_points - 1) as f64).round() as usize)
        .collect();
    g.dedup();
    g
}

/// Smallest prefix size on the grid whose tail fit is regular (`ξ̂ > −0.5`).
///
/// Prefixes with fewer than `k_min` tail samples are skipped. When no
/// prefix qualifies the error asks for at least `0.1·n` more samples.
pub fn min_regular_size(samples: &[f64], policy: &ThresholdPolicy, grid_points: usize, k_min: usize) -> Result<usize> {
    policy.validate()?;
    let n = samples.len();
    let lo = (n / grid_points.max(1)).max(1);
    for j in size_grid(lo, n, grid_points) {
        let mut prefix = samples[..j].to_vec();
        if let Ok(fit) = policy.fit(&mut prefix) {
            if fit.k >= k_min && fit.xi() > REGULARITY_BOUND {
                return Ok(j);
            }
        }
    }
    let more = (n as f64 * 0.1).ceil() as usize;
    Err(Error::insufficient(format!(
        "no prefix gives a regular tail fit (shape > {REGULARITY_BOUND}); collect at least {more} more samples"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SizeRow {
    pub j: usize,
    pub p_bar: Option<f64>,
    /// Population standard deviation of the `M` p-values.
    pub s: Option<f64>,
    pub lower_bound: Option<f64>,
    pub missing_fraction: f64,
    /// Too many failed cells; left out of the decision.
    pub excluded: bool,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MssdReport {
    pub verdict: Verdict,
    pub j0: Option<usize>,
    pub n0: Option<usize>,
    pub n: usize,
    /// `(j, s_j − s_{j0})` for every decided size `j ≥ j0`.
    pub gains: Vec<(usize, f64)>,
    pub sizes: Vec<SizeRow>,
    pub t_star: f64,
    pub alpha: f64,
    pub confidence: f64,
    pub bound_scale: BoundScale,
    pub m_sets: usize,
    pub k_sets: usize,
    pub return_period: f64,
    pub policy: ThresholdPolicy,
    pub seed: u64,
    /// Extra samples to collect when infeasible (at least `0.1·n0`).
    pub required_increment: Option<usize>,
    pub note: Option<String>,
}

impl MssdReport {
    /// Writes `(j, p̄, s, lower bound, missing share, excluded)` as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "p_bar", "s", "lower_bound", "missing_fraction", "excluded", "passes"])
            .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for r in &self.sizes {
            w.write_record([
                r.j.to_string(),
                opt(r.p_bar),
                opt(r.s),
                opt(r.lower_bound),
                format!("{}", r.missing_fraction),
                r.excluded.to_string(),
                r.passes.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_rng(seed: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

fn infeasible_report(n: usize, config: &MssdConfig, n0: Option<usize>, note: String) -> MssdReport {
    let base = n0.unwrap_or(n);
    MssdReport {
        verdict: Verdict::Infeasible,
        j0: None,
        n0,
        n,
        gains: vec![],
        sizes: vec![],
        t_star: config.t_star(),
        alpha: config.alpha,
        confidence: config.confidence,
        bound_scale: config.bound_scale,
        m_sets: config.m_sets,
        k_sets: config.k_sets,
        return_period: config.m,
        policy: config.policy,
        seed: config.seed,
        required_increment: Some(((base as f64) * 0.1).ceil() as usize),
        note: Some(note),
    }
}

/// Runs the two-step bootstrap over the size grid and locates `j0`.
///
/// Every cell draws from its own stream derived from the seed and the cell
/// coordinates, so the report does not depend on scheduling.
pub fn mssd(samples: &[f64], config: &MssdConfig) -> Result<MssdReport> {
    config.validate()?;
    let n = samples.len();
    if n < 2 * config.k_min {
        return Ok(infeasible_report(n, config, None, format!("series of {n} samples is too short")));
    }
    let n0 = match config.n0 {
        Some(v) if v >= 1 && v <= n => v,
        Some(v) => return Err(Error::invalid(format!("n0 = {v} must lie in [1, {n}]"))),
        None => match min_regular_size(samples, &config.policy, config.grid_points, config.k_min) {
            Ok(v) => v,
            Err(e) => return Ok(infeasible_report(n, config, None, e.to_string())),
        },
    };
    let grid = size_grid(n0, n, config.grid_points);
    let (big_m, big_k) = (config.m_sets, config.k_sets);

    let first_step: Vec<Vec<f64>> = (0..big_m)
        .into_par_iter()
        .map(|mi| {
            if mi == 0 {
                samples.to_vec()
            } else {
                let mut rng = cell_rng(config.seed, "first", &[mi as u64]);
                bootstrap_resample(samples, n, &mut rng).expect("non-empty source")
            }
        })
        .collect();

    let cells: Vec<(usize, usize, usize)> = (0..big_m)
        .flat_map(|mi| grid.iter().enumerate().flat_map(move |(gi, _)| (0..big_k).map(move |ki| (mi, gi, ki))))
        .collect();
    let levels: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(mi, gi, ki)| {
            let j = grid[gi];
            let prefix = &first_step[mi][..j];
            let mut set = if ki == 0 {
                prefix.to_vec()
            } else {
                let mut rng = cell_rng(config.seed, "second", &[mi as u64, j as u64, ki as u64]);
                bootstrap_resample(prefix, j, &mut rng).ok()?
            };
            let fit = config.policy.fit(&mut set).ok()?;
            if !fit.regular {
                return None;
            }
            fit.return_level(config.m).ok()
        })
        .collect();

    let t_star = config.t_star();
    let mut rows = Vec::with_capacity(grid.len());
    for (gi, &j) in grid.iter().enumerate() {
        let mut p = Vec::with_capacity(big_m);
        let mut missing = 0usize;
        for mi in 0..big_m {
            let base = (mi * grid.len() + gi) * big_k;
            let d: Vec<f64> = levels[base..base + big_k].iter().flatten().cloned().collect();
            missing += big_k - d.len();
            if let Ok(pv) = ad_normality_p(&d) {
                p.push(pv);
            } else {
                missing += d.len();
            }
        }
        let missing_fraction = missing as f64 / (big_m * big_k) as f64;
        let excluded = missing_fraction > config.max_missing_fraction || p.len() < 2;
        let (p_bar, s, lower) = if excluded {
            (None, None, None)
        } else {
            let pb = stats::mean(&p);
            let s = (p.iter().map(|v| (v - pb).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
            let spread = match config.bound_scale {
                BoundScale::StandardError => s / ((p.len() - 1) as f64).sqrt(),
                BoundScale::StdDev => s,
            };
            (Some(pb), Some(s), Some(pb - t_star * spread))
        };
        rows.push(SizeRow {
            j,
            p_bar,
            s,
            lower_bound: lower,
            missing_fraction,
            excluded,
            passes: lower.is_some_and(|lb| lb > config.alpha),
        });
    }

    // smallest decided size from which every later decided size passes
    let decided: Vec<&SizeRow> = rows.iter().filter(|r| !r.excluded).collect();
    let mut j0 = None;
    for i in (0..decided.len()).rev() {
        if decided[i].passes {
            j0 = Some(i);
        } else {
            break;
        }
    }
    let mut report = infeasible_report(n, config, Some(n0), String::new());
    report.t_star = t_star;
    report.note = None;
    report.sizes = rows.clone();
    match j0 {
        Some(i0) => {
            let s0 = decided[i0].s.unwrap_or(0.0);
            report.verdict = Verdict::Feasible;
            report.j0 = Some(decided[i0].j);
            report.gains = decided[i0..].iter().map(|r| (r.j, r.s.unwrap_or(0.0) - s0)).collect();
            report.required_increment = None;
        }
        None => {
            report.note = Some(if decided.is_empty() {
                "every size had too many failed fits".to_string()
            } else {
                format!(
                    "the largest size fails the lower-bound test; collect at least {} more samples",
                    report.required_increment.unwrap_or(0)
                )
            });
        }
    }
    Ok(report)
}
