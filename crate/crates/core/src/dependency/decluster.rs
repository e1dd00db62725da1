//! Runs declustering: one minimum per cluster of sub-threshold samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, GpdFit};
use crate::series::is_iid_with;
use crate::series::DEFAULT_MAX_VIOLATION_FRACTION;
use crate::threshold::{stability_threshold, FitStatus, ScanRecord, ThresholdScan, DEFAULT_K_MIN, DEFAULT_R2_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DeclusterResult {
    pub u: f64,
    pub r: usize,
    /// Inclusive `(start, end)` index pairs, ordered and disjoint.
    pub cluster_spans: Vec<(usize, usize)>,
    pub minima: Vec<f64>,
    pub minimum_indices: Vec<usize>,
}

impl DeclusterResult {
    pub fn len(&self) -> usize {
        self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minima.is_empty()
    }
}

/// Groups sub-threshold samples into clusters.
///
/// A cluster opens at a sample below `u` and stays open while samples remain
/// below `u`. After a sample at or above `u` it tolerates up to `r` further
/// such samples; a sample below `u` within that window rejoins the cluster,
/// otherwise the cluster ends at its last sub-threshold sample.
pub fn decluster(samples: &[f64], u: f64, r: usize) -> Result<DeclusterResult> {
    if !u.is_finite() {
        return Err(Error::invalid("declustering threshold must be finite"));
    }
    let n = samples.len();
    let mut spans = Vec::new();
    let mut minima = Vec::new();
    let mut minimum_indices = Vec::new();
    let mut i = 0;
    while i < n {
        if samples[i] >= u {
            i += 1;
            continue;
        }
        let start = i;
        let mut last = i;
        let mut gap = 0;
        let mut j = i + 1;
        while j < n {
            if samples[j] < u {
                last = j;
                gap = 0;
            } else {
                gap += 1;
                if gap > r {
                    break;
                }
            }
            j += 1;
        }
        let (mut arg, mut min) = (start, samples[start]);
        for (t, &x) in samples.iter().enumerate().take(last + 1).skip(start) {
            if x < min {
                min = x;
                arg = t;
            }
        }
        spans.push((start, last));
        minima.push(min);
        minimum_indices.push(arg);
        i = last + 1;
    }
    Ok(DeclusterResult { u, r, cluster_spans: spans, minima, minimum_indices })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct DeclusterConfig {
    pub r2_min: f64,
    /// Largest relative change in `ξ̂` and `σ*` tolerated between consecutive
    /// `r`, measured against `max(|a|, |b|, 1)`.
    pub eps_param: f64,
    pub k_min: usize,
    pub max_lag: usize,
    pub max_violation_fraction: f64,
}

impl Default for DeclusterConfig {
    fn default() -> Self {
        Self {
            r2_min: DEFAULT_R2_MIN,
            eps_param: 0.05,
            k_min: DEFAULT_K_MIN,
            max_lag: 50,
            max_violation_fraction: DEFAULT_MAX_VIOLATION_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DeclusterScanRow {
    pub r: usize,
    pub u: f64,
    pub clusters: usize,
    pub xi: Option<f64>,
    pub sigma_star: Option<f64>,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RunLengthSummary {
    pub r: usize,
    /// Stability threshold of the cluster minima for this `r`.
    pub u0: Option<f64>,
    pub iid: Option<bool>,
    /// Whether `ξ̂` and `σ*` at `u0` agree with the next `r` in the grid.
    pub stable_against_next: Option<bool>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DeclusterSelection {
    pub u: f64,
    pub r: usize,
    pub result: DeclusterResult,
    pub fit: GpdFit,
    pub summaries: Vec<RunLengthSummary>,
    pub scan: Vec<DeclusterScanRow>,
}

fn fit_minima(samples: &[f64], u: f64, r: usize, k_min: usize) -> (usize, std::result::Result<GpdFit, FitStatus>) {
    let res = match decluster(samples, u, r) {
        Ok(res) => res,
        Err(e) => return (0, Err(FitStatus::Failed { message: e.to_string() })),
    };
    let k = res.len();
    if k < k_min.max(2) {
        return (k, Err(FitStatus::TooFewExcesses { k }));
    }
    let y: Vec<f64> = res.minima.iter().map(|m| u - m).collect();
    match fit_gpd(&y, samples.len(), u) {
        Ok(f) => (k, Ok(f)),
        Err(e) => (k, Err(FitStatus::Failed { message: e.to_string() })),
    }
}

fn relative_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Chooses the continuation gap `r` and threshold `u`.
///
/// For each `r` (ascending) the cluster minima are fitted over `u_grid` and
/// the parameter-stability rule picks `u0(r)`. The smallest `r` is accepted
/// whose minima at `u0(r)` look i.i.d. and whose `ξ̂` and `σ*` at `u0(r)`
/// change by less than `eps_param` when `r` grows to the next grid value.
/// A single-valued `r_grid` skips the second check.
pub fn select_decluster_params(
    samples: &[f64],
    u_grid: &[f64],
    r_grid: &[usize],
    config: &DeclusterConfig,
) -> Result<DeclusterSelection> {
    if u_grid.is_empty() || r_grid.is_empty() {
        return Err(Error::invalid("declustering grids must be non-empty"));
    }
    if !(config.r2_min > 0.0 && config.r2_min < 1.0) {
        return Err(Error::invalid(format!("r2_min must lie in (0, 1), got {}", config.r2_min)));
    }
    let mut rs = r_grid.to_vec();
    rs.sort_unstable();
    rs.dedup();
    let mut us = u_grid.to_vec();
    us.sort_by(f64::total_cmp);
    us.dedup();

    let cells: Vec<(usize, f64)> = rs.iter().flat_map(|&r| us.iter().map(move |&u| (r, u))).collect();
    let fits: Vec<(usize, std::result::Result<GpdFit, FitStatus>)> =
        cells.par_iter().map(|&(r, u)| fit_minima(samples, u, r, config.k_min)).collect();

    let scan: Vec<DeclusterScanRow> = cells
        .iter()
        .zip(&fits)
        .map(|(&(r, u), (k, f))| DeclusterScanRow {
            r,
            u,
            clusters: *k,
            xi: f.as_ref().ok().map(|f| f.xi()),
            sigma_star: f.as_ref().ok().map(|f| f.modified_scale()),
            status: match f {
                Ok(_) => FitStatus::Ok,
                Err(s) => s.clone(),
            },
        })
        .collect();

    let u0_for = |ri: usize| -> Option<f64> {
        let records: Vec<ScanRecord> = (0..us.len())
            .map(|ui| {
                let (k, f) = &fits[ri * us.len() + ui];
                ScanRecord {
                    u: us[ui],
                    k: *k,
                    mean_excess: None,
                    mean_excess_se: None,
                    fit: f.as_ref().ok().cloned(),
                    status: match f {
                        Ok(_) => FitStatus::Ok,
                        Err(s) => s.clone(),
                    },
                }
            })
            .collect();
        let scan = ThresholdScan { n: samples.len(), k_min: config.k_min, records };
        stability_threshold(&scan, config.r2_min).u0
    };

    let mut summaries = Vec::new();
    let mut chosen = None;
    for (ri, &r) in rs.iter().enumerate() {
        let mut s = RunLengthSummary { r, u0: u0_for(ri), iid: None, stable_against_next: None, accepted: false };
        if let Some(u0) = s.u0 {
            let res = decluster(samples, u0, r)?;
            let lag = config.max_lag.min(res.len() / 2);
            s.iid = Some(lag >= 1 && is_iid_with(&res.minima, lag, config.max_violation_fraction)?.iid);
            s.stable_against_next = match rs.get(ri + 1) {
                None if rs.len() == 1 => Some(true),
                None => None,
                Some(&next) => {
                    let (_, a) = fit_minima(samples, u0, r, config.k_min);
                    let (_, b) = fit_minima(samples, u0, next, config.k_min);
                    Some(match (a, b) {
                        (Ok(a), Ok(b)) => {
                            relative_change(a.xi(), b.xi()) < config.eps_param
                                && relative_change(a.modified_scale(), b.modified_scale()) < config.eps_param
                        }
                        _ => false,
                    })
                }
            };
            s.accepted = s.iid == Some(true) && s.stable_against_next == Some(true);
            if s.accepted && chosen.is_none() {
                let (_, fit) = fit_minima(samples, u0, r, config.k_min);
                if let Ok(fit) = fit {
                    chosen = Some((u0, r, res, fit));
                }
            }
        }
        summaries.push(s);
        if chosen.is_some() {
            break;
        }
    }

    match chosen {
        Some((u, r, result, fit)) => Ok(DeclusterSelection { u, r, result, fit, summaries, scan }),
        None => {
            let table: Vec<String> = summaries
                .iter()
                .map(|s| format!("r={} u0={:?} iid={:?} stable={:?}", s.r, s.u0, s.iid, s.stable_against_next))
                .collect();
            Err(Error::NoFeasibleSelection(format!(
                "no (u, r) pair gives i.i.d. and stable cluster minima: {}",
                table.join("; ")
            )))
        }
    }
}
