//! End-to-end flow: dependency check and removal, threshold selection, tail
//! fit, sample-size sufficiency, validation and baseline comparison.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dependency::{arima_garch_pipeline, select_decluster_params, DeclusterConfig, FilterConfig};
use crate::error::{Error, Result};
use crate::gpd::{excesses, fit_gpd_at, GpdFit};
use crate::io::{ingest, validate_against, write_atomic, write_atomic_with, InputFormat};
use crate::mssd::{min_regular_size, mssd, MssdConfig, MssdReport, ThresholdPolicy, Verdict};
use crate::series::{is_iid_with, IidDiagnostics, TimeSeries, Unit, DEFAULT_MAX_VIOLATION_FRACTION};
use crate::threshold::{select_threshold, stability_curves, threshold_grid, ThresholdConfig, ThresholdDecision};
use crate::validate::{
    compare, pp_points, qq_envelope, qq_points, CompareConfig, Comparison, Family, ParametricFit, PowerScale,
    ProbabilityPlotData, QqEnvelope, RmseRow,
};

pub const REPORT_FILE: &str = "report.json";
pub const SCAN_FILE: &str = "scan.csv";
pub const MSSD_FILE: &str = "mssd.csv";
pub const PPQQ_FILE: &str = "ppqq.csv";
pub const COMPARE_FILE: &str = "compare.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DependencyMode {
    Declustering,
    ArimaGarch,
    /// Declustering, falling back to ARIMA–GARCH when no `(u, r)` qualifies.
    #[default]
    Auto,
}

impl std::str::FromStr for DependencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "declustering" => Ok(DependencyMode::Declustering),
            "arima_garch" => Ok(DependencyMode::ArimaGarch),
            "auto" => Ok(DependencyMode::Auto),
            other => Err(Error::invalid(format!("unknown dependency mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct IidConfig {
    pub max_lag: usize,
    pub max_violation_fraction: f64,
}

impl Default for IidConfig {
    fn default() -> Self {
        Self { max_lag: 50, max_violation_fraction: DEFAULT_MAX_VIOLATION_FRACTION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct DeclusterStage {
    pub r_grid: Vec<usize>,
    #[serde(flatten)]
    pub config: DeclusterConfig,
}

impl Default for DeclusterStage {
    fn default() -> Self {
        Self { r_grid: vec![0, 1, 2, 3, 4, 6, 8, 12, 16, 20, 24, 32], config: DeclusterConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default)]
pub struct ValidationConfig {
    pub envelope_draws: usize,
    pub envelope_level: f64,
    pub compare: CompareConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { envelope_draws: 200, envelope_level: 0.95, compare: CompareConfig::default() }
    }
}

/// Everything a run needs. The top-level `seed` overrides nested seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub unit: Unit,
    /// Sampling interval for single-column input.
    pub interval_ms: f64,
    pub mode: DependencyMode,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub iid: IidConfig,
    pub threshold: ThresholdConfig,
    pub decluster: DeclusterStage,
    pub filter: FilterConfig,
    pub mssd: MssdConfig,
    pub validation: ValidationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: InputFormat::Auto,
            unit: Unit::Dbm,
            interval_ms: 1.0,
            mode: DependencyMode::Auto,
            output_dir: PathBuf::from("out"),
            seed: 0,
            iid: IidConfig::default(),
            threshold: ThresholdConfig::default(),
            decluster: DeclusterStage::default(),
            filter: FilterConfig::default(),
            mssd: MssdConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display()))))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        self.mssd.validate()?;
        if self.decluster.r_grid.is_empty() {
            return Err(Error::invalid("decluster r_grid must not be empty"));
        }
        if !(self.interval_ms > 0.0) {
            return Err(Error::invalid("interval_ms must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn series_digest(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in samples {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Dependency,
    Threshold,
    Fit,
    Mssd,
    Validation,
    Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    CollectMoreData,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DependencyMethod {
    None,
    Declustering,
    ArimaGarch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DeclusterSummary {
    pub u: f64,
    pub r: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FilterSummary {
    pub arima: crate::dependency::ArimaModel,
    pub garch: crate::dependency::GarchModel,
    pub garch_note: Option<String>,
    pub diagnostics: IidDiagnostics,
    pub z_mean: f64,
    pub z_variance: f64,
    pub moments_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct DependencySummary {
    pub initial: IidDiagnostics,
    pub method: DependencyMethod,
    pub decluster: Option<DeclusterSummary>,
    pub filter: Option<FilterSummary>,
    pub notes: Vec<String>,
    /// Length of the series handed to the tail analysis.
    pub tail_series_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ThresholdSummary {
    pub u0: f64,
    /// `"declustering"` or the selection method.
    pub source: String,
    pub decision: Option<ThresholdDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FitSummary {
    pub fit: GpdFit,
    /// Shape in the lower-tail sign convention, `−ξ`.
    pub mirrored_shape: f64,
    pub modified_scale: f64,
    pub se_modified_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PlotSummary {
    pub points: usize,
    pub max_abs_dev: f64,
    pub rmse_dev: f64,
}

impl From<&ProbabilityPlotData> for PlotSummary {
    fn from(p: &ProbabilityPlotData) -> Self {
        Self { points: p.points.len(), max_abs_dev: p.max_abs_dev, rmse_dev: p.rmse_dev }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ValidationSummary {
    pub pp: PlotSummary,
    pub qq: PlotSummary,
    pub envelope_level: f64,
    pub envelope_draws: usize,
    pub qq_points_outside_envelope: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ComparisonSummary {
    pub mean_power: f64,
    pub rmse: Vec<RmseRow>,
    pub baselines: Vec<ParametricFit>,
    pub failed: Vec<(Family, String)>,
    pub u_low: f64,
    pub zeta_low: f64,
    pub u_high: f64,
    pub zeta_high: f64,
    pub bandwidth: f64,
}

impl From<&Comparison> for ComparisonSummary {
    fn from(c: &Comparison) -> Self {
        Self {
            mean_power: c.mean_power,
            rmse: c.rmse.clone(),
            baselines: c.baselines.clone(),
            failed: c.failed.clone(),
            u_low: c.composite.u_low,
            zeta_low: c.composite.zeta_low,
            u_high: c.composite.u_high,
            zeta_high: c.composite.zeta_high,
            bandwidth: c.composite.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct InputSummary {
    pub path: String,
    pub n: usize,
    pub unit: Unit,
    pub interval_ms: f64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AnalysisReport {
    pub status: RunStatus,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    /// Extra samples to collect before rerunning.
    pub required_increment: Option<usize>,
    pub input: Option<InputSummary>,
    pub dependency: Option<DependencySummary>,
    pub threshold: Option<ThresholdSummary>,
    pub fit: Option<FitSummary>,
    pub mssd: Option<MssdReport>,
    pub validation: Option<ValidationSummary>,
    pub comparison: Option<ComparisonSummary>,
    pub provenance: Provenance,
}

impl AnalysisReport {
    fn new(config: &PipelineConfig) -> Self {
        Self {
            status: RunStatus::Complete,
            failed_stage: None,
            error: None,
            required_increment: None,
            input: None,
            dependency: None,
            threshold: None,
            fit: None,
            mssd: None,
            validation: None,
            comparison: None,
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_hash: config.hash(),
                seed: config.seed,
            },
        }
    }

    fn fail(&mut self, stage: Stage, err: &Error) {
        self.status = RunStatus::Failed;
        self.failed_stage = Some(stage);
        self.error = Some(err.to_string());
    }

    /// Process exit code: 0 complete, 2 more data needed, 1 failure.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Complete => 0,
            RunStatus::CollectMoreData => 2,
            RunStatus::Failed => 1,
        }
    }
}

/// JSON schema of [`AnalysisReport`].
pub fn report_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(AnalysisReport)).expect("schema serializes")
}

/// Serializes the report after checking it against [`report_schema`].
pub fn report_json(report: &AnalysisReport) -> Result<String> {
    let value = serde_json::to_value(report)?;
    validate_against(&report_schema(), &value)?;
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

/// Writes PP and QQ points (with the QQ envelope) as one CSV.
pub fn write_ppqq_csv(
    w: &mut dyn std::io::Write,
    pp: &ProbabilityPlotData,
    qq: &ProbabilityPlotData,
    env: Option<&QqEnvelope>,
) -> Result<()> {
    writeln!(w, "kind,i,empirical,modeled,envelope_lower,envelope_upper")?;
    for (i, (e, m)) in pp.points.iter().enumerate() {
        writeln!(w, "pp,{},{e},{m},,", i + 1)?;
    }
    for (i, (e, m)) in qq.points.iter().enumerate() {
        let (lo, hi) = env.map(|v| (v.lower[i].to_string(), v.upper[i].to_string())).unwrap_or_default();
        writeln!(w, "qq,{},{e},{m},{lo},{hi}", i + 1)?;
    }
    Ok(())
}

struct TailData {
    samples: Vec<f64>,
    declustered: Option<(f64, GpdFit)>,
}

fn remove_dependency(
    series: &TimeSeries,
    config: &PipelineConfig,
    initial: IidDiagnostics,
) -> Result<(TailData, DependencySummary)> {
    let x = series.samples();
    let mut summary = DependencySummary {
        initial: initial.clone(),
        method: DependencyMethod::None,
        decluster: None,
        filter: None,
        notes: vec![],
        tail_series_len: x.len(),
    };
    if initial.iid {
        return Ok((TailData { samples: x.to_vec(), declustered: None }, summary));
    }
    let try_decluster = matches!(config.mode, DependencyMode::Declustering | DependencyMode::Auto);
    if try_decluster {
        let grid = threshold_grid(x, config.threshold.grid_points)?;
        let mut dc = config.decluster.config;
        dc.r2_min = config.threshold.r2_min;
        match select_decluster_params(x, &grid, &config.decluster.r_grid, &dc) {
            Ok(sel) => {
                summary.method = DependencyMethod::Declustering;
                summary.decluster = Some(DeclusterSummary { u: sel.u, r: sel.r, clusters: sel.result.len() });
                summary.tail_series_len = sel.result.len();
                let tail = TailData { samples: sel.result.minima.clone(), declustered: Some((sel.u, sel.fit)) };
                return Ok((tail, summary));
            }
            Err(e @ Error::NoFeasibleSelection(_)) if config.mode == DependencyMode::Auto => {
                summary.notes.push(format!("declustering: {e}; using ARIMA-GARCH filtering"));
            }
            Err(e) => return Err(e),
        }
    }
    let f = arima_garch_pipeline(series, &config.filter)?;
    if !f.iid() {
        summary.notes.push("standardized residuals still fail the whiteness check".into());
    }
    if !f.moments_ok {
        summary.notes.push("standardized residual moments are off target".into());
    }
    summary.method = DependencyMethod::ArimaGarch;
    summary.tail_series_len = f.z.len();
    summary.filter = Some(FilterSummary {
        arima: f.arima,
        garch: f.garch,
        garch_note: f.garch_note,
        diagnostics: f.diagnostics,
        z_mean: f.z_mean,
        z_variance: f.z_variance,
        moments_ok: f.moments_ok,
    });
    Ok((TailData { samples: f.z, declustered: None }, summary))
}

/// Reads `config.input` and runs the full analysis, writing artifacts to
/// `config.output_dir`. Stage failures are recorded in the report; only a
/// failure to write the report itself is returned as an error.
pub fn run_pipeline(config: &PipelineConfig) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new(config);
    let out = config.output_dir.clone();
    let loaded = config.validate().and_then(|_| ingest(&config.input, config.format, config.unit, config.interval_ms));
    match loaded {
        Ok(series) => run_stages(&series, config, &mut report),
        Err(e) => report.fail(Stage::Ingest, &e),
    }
    write_atomic(&out.join(REPORT_FILE), report_json(&report)?.as_bytes())?;
    Ok(report)
}

/// Runs the analysis on an in-memory series, writing artifacts and the report.
pub fn run_on_series(series: &TimeSeries, config: &PipelineConfig) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::new(config);
    match config.validate() {
        Ok(()) => run_stages(series, config, &mut report),
        Err(e) => report.fail(Stage::Ingest, &e),
    }
    write_atomic(&config.output_dir.join(REPORT_FILE), report_json(&report)?.as_bytes())?;
    Ok(report)
}

fn run_stages(series: &TimeSeries, config: &PipelineConfig, report: &mut AnalysisReport) {
    let out = &config.output_dir;
    let x = series.samples();
    report.input = Some(InputSummary {
        path: config.input.display().to_string(),
        n: x.len(),
        unit: series.unit(),
        interval_ms: series.interval_ms(),
        digest: series_digest(x),
    });
    let min_len = 2 * config.threshold.k_min.max(config.mssd.k_min);
    if x.len() < min_len.max(config.iid.max_lag + 2) {
        report.status = RunStatus::CollectMoreData;
        report.failed_stage = Some(Stage::Ingest);
        report.error = Some(format!("{} samples are too few for the analysis", x.len()));
        report.required_increment = Some((x.len() as f64 * 0.1).ceil().max(1.0) as usize);
        return;
    }

    // dependency
    let lag = config.iid.max_lag.min(x.len() / 2);
    let dep = is_iid_with(x, lag, config.iid.max_violation_fraction)
        .and_then(|initial| remove_dependency(series, config, initial));
    let (tail, summary) = match dep {
        Ok(v) => v,
        Err(e) => return report.fail(Stage::Dependency, &e),
    };
    report.dependency = Some(summary);
    let t = &tail.samples;

    // threshold and fit
    let (u0, fit) = if let Some((u, fit)) = &tail.declustered {
        report.threshold = Some(ThresholdSummary { u0: *u, source: "declustering".into(), decision: None });
        if let Ok(grid) = threshold_grid(t, config.threshold.grid_points) {
            if let Ok(scan) = stability_curves(t, &grid, config.threshold.k_min) {
                if let Err(e) = write_atomic_with(&out.join(SCAN_FILE), |w| scan.write_csv(w)) {
                    return report.fail(Stage::Threshold, &e);
                }
            }
        }
        (*u, fit.clone())
    } else {
        let sel = match select_threshold(t, &config.threshold) {
            Ok(s) => s,
            Err(e) => return report.fail(Stage::Threshold, &e),
        };
        if let Some(scan) = &sel.scan {
            if let Err(e) = write_atomic_with(&out.join(SCAN_FILE), |w| scan.write_csv(w)) {
                return report.fail(Stage::Threshold, &e);
            }
        }
        let Some(u0) = sel.decision.u0 else {
            let e = Error::NoFeasibleSelection(sel.decision.rationale.clone());
            report.threshold = None;
            return report.fail(Stage::Threshold, &e);
        };
        report.threshold = Some(ThresholdSummary {
            u0,
            source: format!("{:?}", sel.decision.method).to_lowercase(),
            decision: Some(sel.decision),
        });
        match fit_gpd_at(t, u0) {
            Ok(f) => (u0, f),
            Err(e) => return report.fail(Stage::Fit, &e),
        }
    };
    report.fit = Some(FitSummary {
        mirrored_shape: fit.mirrored_shape(),
        modified_scale: fit.modified_scale(),
        se_modified_scale: fit.se_modified_scale(),
        fit: fit.clone(),
    });

    // sample-size sufficiency
    let mut mc = config.mssd.clone();
    mc.seed = config.seed;
    mc.k_min = mc.k_min.min(config.threshold.k_min);
    if tail.declustered.is_some() {
        // every minimum lies below u0; the return period is rescaled so the
        // return level matches the one of the original series
        mc.policy = ThresholdPolicy::Fixed { u: u0 };
        mc.m = config.mssd.m * fit.zeta_u;
    } else {
        mc.policy = ThresholdPolicy::Quantile { fraction: fit.zeta_u };
    }
    let outcome = match mc.n0 {
        Some(_) => mssd(t, &mc),
        None => match min_regular_size(t, &mc.policy, mc.grid_points, mc.k_min) {
            Ok(n0) => mssd(t, &MssdConfig { n0: Some(n0), ..mc.clone() }),
            Err(e) => {
                report.status = RunStatus::CollectMoreData;
                report.failed_stage = Some(Stage::Mssd);
                report.error = Some(e.to_string());
                report.required_increment = Some((t.len() as f64 * 0.1).ceil() as usize);
                return;
            }
        },
    };
    let ms = match outcome {
        Ok(m) => m,
        Err(e) => return report.fail(Stage::Mssd, &e),
    };
    if let Err(e) = write_atomic_with(&out.join(MSSD_FILE), |w| ms.write_csv(w)) {
        return report.fail(Stage::Mssd, &e);
    }
    let insufficient = ms.verdict == Verdict::Infeasible || ms.j0.is_some_and(|j0| t.len() < j0);
    let increment = ms.required_increment.or_else(|| ms.n0.map(|n0| (n0 as f64 * 0.1).ceil() as usize));
    report.mssd = Some(ms);
    if insufficient {
        report.status = RunStatus::CollectMoreData;
        report.failed_stage = Some(Stage::Mssd);
        report.error = Some("sample size is not sufficient for a stable tail estimate".into());
        report.required_increment = increment;
        return;
    }

    // validation
    let validated = (|| -> Result<ValidationSummary> {
        let pp = pp_points(&fit, &excesses(t, u0))?;
        let qq = qq_points(&fit, t, u0)?;
        let vc = &config.validation;
        let env = qq_envelope(&fit, qq.points.len(), vc.envelope_draws, vc.envelope_level, config.seed)?;
        write_atomic_with(&out.join(PPQQ_FILE), |w| write_ppqq_csv(w, &pp, &qq, Some(&env)))?;
        Ok(ValidationSummary {
            pp: PlotSummary::from(&pp),
            qq: PlotSummary::from(&qq),
            envelope_level: vc.envelope_level,
            envelope_draws: vc.envelope_draws,
            qq_points_outside_envelope: env.outside(&qq).len(),
        })
    })();
    match validated {
        Ok(v) => report.validation = Some(v),
        Err(e) => return report.fail(Stage::Validation, &e),
    }

    // baseline comparison on the measured series
    let mut cc = config.validation.compare.clone();
    cc.scale = match series.unit() {
        Unit::Dbm => PowerScale::Db,
        Unit::LinearMw => PowerScale::Linear,
        Unit::Dimensionless => cc.scale,
    };
    let direct = report.dependency.as_ref().is_some_and(|d| d.method == DependencyMethod::None);
    if !direct {
        cc.tail_fraction = fit.zeta_u.clamp(1e-4, 0.45);
    }
    let compared = compare(x, if direct { Some(&fit) } else { None }, &cc).and_then(|c| {
        write_atomic_with(&out.join(COMPARE_FILE), |w| c.write_csv(w))?;
        Ok(c)
    });
    match compared {
        Ok(c) => report.comparison = Some(ComparisonSummary::from(&c)),
        Err(e) => report.fail(Stage::Comparison, &e),
    }
}
