use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evtchan::dependency::{arima_garch_pipeline, decluster, select_decluster_params, DeclusterConfig, FilterConfig};
use evtchan::gpd::{excesses, fit_gpd_at};
use evtchan::io::{ingest, write_atomic, write_atomic_with, write_series_csv, InputFormat};
use evtchan::mssd::{min_regular_size, mssd, BoundScale, MssdConfig, ThresholdPolicy, Verdict};
use evtchan::pipeline::{report_schema, run_pipeline, write_ppqq_csv, DependencyMode, PipelineConfig};
use evtchan::series::{acf, acf_squared, is_iid_with, PowerKind, TimeSeries, Unit, DEFAULT_MAX_VIOLATION_FRACTION};
use evtchan::synthetic::{generate, SyntheticSpec};
use evtchan::threshold::{select_threshold, ThresholdConfig};
use evtchan::validate::{compare, pp_points, qq_envelope, qq_points, CompareConfig, Family, PowerScale};
use evtchan::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "evtchan", version, about = "Lower-tail extreme-value modeling of measured time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Input {
    /// CSV file: one value per row, or `time,value` with time in seconds.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "auto")]
    format: InputFormat,
    #[arg(long, default_value = "dbm")]
    unit: Unit,
    /// Sampling interval for single-column input.
    #[arg(long, default_value_t = 1.0)]
    interval_ms: f64,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

impl Input {
    fn load(&self) -> Result<TimeSeries> {
        ingest(&self.input, self.format, self.unit, self.interval_ms)
    }
}

#[derive(Args, Clone)]
struct ThresholdArgs {
    /// Tail threshold; selected automatically when absent.
    #[arg(short, long, allow_hyphen_values = true)]
    u: Option<f64>,
    #[arg(long, default_value_t = 40)]
    grid_points: usize,
    #[arg(long, default_value_t = 30)]
    k_min: usize,
    #[arg(long, default_value_t = 0.95)]
    r2_min: f64,
}

impl ThresholdArgs {
    fn config(&self) -> ThresholdConfig {
        ThresholdConfig { grid_points: self.grid_points, k_min: self.k_min, r2_min: self.r2_min }
    }

    fn resolve(&self, x: &[f64]) -> Result<f64> {
        if let Some(u) = self.u {
            return Ok(u);
        }
        let sel = select_threshold(x, &self.config())?;
        sel.decision.u0.ok_or(Error::NoFeasibleSelection(sel.decision.rationale))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Autocorrelation of the series and its square, with the whiteness verdict.
    Acf {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_VIOLATION_FRACTION)]
        max_violation_fraction: f64,
    },
    /// Cluster minima below `u` with gap `r`, or a search over both.
    Decluster {
        #[command(flatten)]
        input: Input,
        #[arg(short, long, allow_hyphen_values = true)]
        u: Option<f64>,
        #[arg(short, long)]
        r: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,6,8,12,16,20,24,32")]
        r_grid: Vec<usize>,
        #[arg(long, default_value_t = 40)]
        grid_points: usize,
    },
    /// ARMA mean and GJR-GARCH variance filtering to standardized residuals.
    Filter {
        #[command(flatten)]
        input: Input,
        #[arg(short)]
        p: Option<usize>,
        #[arg(short)]
        q: Option<usize>,
        #[arg(short, default_value_t = 0)]
        d: usize,
        #[arg(long)]
        transform: Option<PowerKind>,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
    },
    /// Mean residual life and parameter stability over a threshold grid.
    ThresholdScan {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        threshold: ThresholdArgs,
    },
    /// GPD fit of the lower tail.
    Fit {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        threshold: ThresholdArgs,
        /// Return periods to report.
        #[arg(long, value_delimiter = ',', default_value = "100,10000,1000000")]
        return_periods: Vec<f64>,
    },
    /// Minimum sufficient sample size by bootstrap normality of return levels.
    Mssd {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long = "sets-m", default_value_t = 20)]
        m_sets: usize,
        #[arg(long = "sets-k", default_value_t = 50)]
        k_sets: usize,
        #[arg(long, default_value_t = 15)]
        mssd_grid: usize,
        #[arg(long)]
        n0: Option<usize>,
        /// Return period of the tested return level.
        #[arg(short, long, default_value_t = 1e6)]
        m: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Use the spread of the p-values instead of its standard error.
        #[arg(long)]
        std_dev_bound: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PP and QQ points of the tail fit with a bootstrap QQ envelope.
    Validate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// CDF table of the composite model against extrapolated parametric fits.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0.05)]
        tail_fraction: f64,
        #[arg(long, value_delimiter = ',', default_value = "weibull,rician")]
        families: Vec<String>,
        /// Fit the baselines to the first N samples instead of the 1e-3..1 CDF region.
        #[arg(long)]
        first: Option<usize>,
    },
    /// Synthetic series with known ground truth.
    Simulate {
        #[arg(long)]
        family: String,
        #[arg(short, long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Family parameter as key=value; lists as comma-separated values.
        #[arg(long = "param", value_name = "KEY=VALUE", allow_hyphen_values = true)]
        params: Vec<String>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Full analysis driven by a TOML config.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<DependencyMode>,
        #[arg(long)]
        unit: Option<Unit>,
    },
    /// Print the JSON schema of report.json.
    Schema,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(&dir.join(name), text.as_bytes())
}

fn family_defaults(family: &str) -> Result<serde_json::Value> {
    use serde_json::json;
    Ok(match family {
        "gpd_tail_splice" => json!({"xi": 0.1, "sigma": 1.0, "u_star": -2.0, "body_mean": 0.0, "body_sd": 1.0}),
        "exponential" => json!({"scale": 1.0}),
        "weibull" => json!({"shape": 2.0, "scale": 1.0}),
        "rician" => json!({"nu": 1.0, "sigma": 1.0}),
        "rayleigh" => json!({"sigma": 1.0}),
        "arma_gjr" => {
            json!({"c": 0.0, "ar": [0.5], "ma": [], "k": 0.1, "gamma": 0.8, "phi": 0.1, "psi": 0.05, "burn_in": 500})
        }
        "white_noise" => json!({"mean": 0.0, "sd": 1.0}),
        other => return Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
    })
}

fn synthetic_spec(family: &str, n: usize, seed: u64, params: &[String]) -> Result<SyntheticSpec> {
    let mut obj = family_defaults(family)?;
    for p in params {
        let (k, v) =
            p.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("parameter '{p}' is not key=value")))?;
        if obj.get(k).is_none() {
            return Err(Error::InvalidArgument(format!("family {family} has no parameter '{k}'")));
        }
        let value = if obj[k].is_array() {
            let items: std::result::Result<Vec<f64>, _> =
                v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse::<f64>()).collect();
            serde_json::json!(items.map_err(|_| Error::InvalidArgument(format!("bad list for '{k}': {v}")))?)
        } else {
            let num: f64 = v.parse().map_err(|_| Error::InvalidArgument(format!("bad number for '{k}': {v}")))?;
            serde_json::json!(num)
        };
        obj[k] = value;
    }
    if obj.get("burn_in").is_some() {
        obj["burn_in"] = serde_json::json!(obj["burn_in"].as_f64().unwrap_or(500.0) as u64);
    }
    obj["family"] = serde_json::json!(family);
    obj["n"] = serde_json::json!(n);
    obj["seed"] = serde_json::json!(seed);
    Ok(serde_json::from_value(obj)?)
}

fn parse_families(names: &[String]) -> Result<Vec<Family>> {
    names
        .iter()
        .map(|n| {
            Family::ALL
                .into_iter()
                .find(|f| f.name() == n.trim().to_ascii_lowercase())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown family '{n}'")))
        })
        .collect()
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Acf { input, max_lag, max_violation_fraction } => {
            let s = input.load()?;
            let plain = acf(&s, max_lag)?;
            let squared = acf_squared(&s, max_lag)?;
            let diag = is_iid_with(s.samples(), max_lag, max_violation_fraction)?;
            write_atomic_with(&input.out.join("acf.csv"), |w| {
                writeln!(w, "lag,acf,acf_squared,bound")?;
                for i in 0..plain.lags.len() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        plain.lags[i], plain.correlations[i], squared.correlations[i], plain.bound
                    )?;
                }
                Ok(())
            })?;
            write_json(&input.out, "acf.json", &diag)?;
            println!(
                "iid: {} ({} of {} lags outside the band, {} squared)",
                diag.iid,
                diag.violating_lags.len(),
                max_lag,
                diag.violating_lags_squared.len()
            );
        }
        Command::Decluster { input, u, r, r_grid, grid_points } => {
            let s = input.load()?;
            let x = s.samples();
            let result = match (u, r) {
                (Some(u), Some(r)) => decluster(x, u, r)?,
                _ => {
                    let grid = evtchan::threshold::threshold_grid(x, grid_points)?;
                    let sel = select_decluster_params(x, &grid, &r_grid, &DeclusterConfig::default())?;
                    write_json(&input.out, "decluster.json", &sel)?;
                    sel.result
                }
            };
            write_series_csv(&input.out.join("minima.csv"), &result.minima)?;
            println!("u = {}, r = {}, clusters = {}", result.u, result.r, result.len());
        }
        Command::Filter { input, p, q, d, transform, max_order } => {
            let s = input.load()?;
            let cfg = FilterConfig { p, q, d, transform, max_order, ..FilterConfig::default() };
            let f = arima_garch_pipeline(&s, &cfg)?;
            write_series_csv(&input.out.join("residuals.csv"), &f.z)?;
            let mut summary = serde_json::to_value(&f)?;
            for key in ["z", "residuals", "conditional_sd"] {
                summary.as_object_mut().map(|o| o.remove(key));
            }
            write_json(&input.out, "filter.json", &summary)?;
            println!(
                "ARMA({}, {}) d={}; GJR persistence {:.4}; residuals iid: {}",
                f.arima.p,
                f.arima.q,
                f.arima.d,
                f.garch.persistence(),
                f.iid()
            );
        }
        Command::ThresholdScan { input, threshold } => {
            let s = input.load()?;
            let sel = select_threshold(s.samples(), &threshold.config())?;
            if let Some(scan) = &sel.scan {
                write_atomic_with(&input.out.join("scan.csv"), |w| scan.write_csv(w))?;
            }
            write_json(&input.out, "threshold.json", &sel.decision)?;
            match sel.decision.u0 {
                Some(u0) => println!("u0 = {u0} ({:?})", sel.decision.method),
                None => {
                    println!("no threshold: {}", sel.decision.rationale);
                    return Ok(2);
                }
            }
        }
        Command::Fit { input, threshold, return_periods } => {
            let s = input.load()?;
            let u = threshold.resolve(s.samples())?;
            let fit = fit_gpd_at(s.samples(), u)?;
            let levels: Vec<(f64, Option<f64>)> =
                return_periods.iter().map(|&m| (m, fit.return_level(m).ok())).collect();
            let out = serde_json::json!({
                "fit": fit,
                "mirrored_shape": fit.mirrored_shape(),
                "modified_scale": fit.modified_scale(),
                "return_levels": levels,
            });
            write_json(&input.out, "fit.json", &out)?;
            println!(
                "u = {u}, k = {}, xi = {:.5}, sigma = {:.5}, sigma* = {:.5}",
                fit.k,
                fit.xi(),
                fit.sigma(),
                fit.modified_scale()
            );
        }
        Command::Mssd {
            input,
            threshold,
            m_sets,
            k_sets,
            mssd_grid,
            n0,
            m,
            alpha,
            confidence,
            std_dev_bound,
            seed,
        } => {
            let s = input.load()?;
            let x = s.samples();
            let u = threshold.resolve(x)?;
            let fit = fit_gpd_at(x, u)?;
            let mut cfg = MssdConfig {
                alpha,
                m_sets,
                k_sets,
                n0,
                grid_points: mssd_grid,
                m,
                confidence,
                seed,
                policy: ThresholdPolicy::Quantile { fraction: fit.zeta_u },
                bound_scale: if std_dev_bound { BoundScale::StdDev } else { BoundScale::StandardError },
                ..MssdConfig::default()
            };
            cfg.k_min = cfg.k_min.min(threshold.k_min);
            if cfg.n0.is_none() {
                if let Ok(v) = min_regular_size(x, &cfg.policy, cfg.grid_points, cfg.k_min) {
                    cfg.n0 = Some(v);
                }
            }
            let report = mssd(x, &cfg)?;
            write_atomic_with(&input.out.join("mssd.csv"), |w| report.write_csv(w))?;
            write_json(&input.out, "mssd.json", &report)?;
            match (report.verdict, report.j0) {
                (Verdict::Feasible, Some(j0)) => println!("feasible: j0 = {j0} of n = {}", x.len()),
                _ => {
                    println!("infeasible: collect at least {} more samples", report.required_increment.unwrap_or(0));
                    return Ok(2);
                }
            }
        }
        Command::Validate { input, threshold, draws, level, seed } => {
            let s = input.load()?;
            let x = s.samples();
            let u = threshold.resolve(x)?;
            let fit = fit_gpd_at(x, u)?;
            let pp = pp_points(&fit, &excesses(x, u))?;
            let qq = qq_points(&fit, x, u)?;
            let env = qq_envelope(&fit, qq.points.len(), draws, level, seed)?;
            write_atomic_with(&input.out.join("ppqq.csv"), |w| write_ppqq_csv(w, &pp, &qq, Some(&env)))?;
            let outside = env.outside(&qq).len();
            let summary = serde_json::json!({
                "u": u,
                "pp_max_abs_dev": pp.max_abs_dev,
                "pp_rmse_dev": pp.rmse_dev,
                "qq_max_abs_dev": qq.max_abs_dev,
                "qq_rmse_dev": qq.rmse_dev,
                "qq_points_outside_envelope": outside,
                "envelope_level": level,
            });
            write_json(&input.out, "validation.json", &summary)?;
            println!("PP max dev {:.4}; QQ points outside the {level} envelope: {outside}", pp.max_abs_dev);
        }
        Command::Compare { input, tail_fraction, families, first } => {
            let s = input.load()?;
            let mut cfg = CompareConfig {
                tail_fraction,
                families: parse_families(&families)?,
                scale: if s.unit() == Unit::LinearMw { PowerScale::Linear } else { PowerScale::Db },
                ..CompareConfig::default()
            };
            if let Some(count) = first {
                cfg.region = evtchan::validate::FitRegion::FirstSamples { count };
            }
            let c = compare(s.samples(), None, &cfg)?;
            write_atomic_with(&input.out.join("compare.csv"), |w| c.write_csv(w))?;
            let summary = serde_json::json!({
                "mean_power": c.mean_power,
                "rmse": c.rmse,
                "baselines": c.baselines,
                "failed": c.failed,
            });
            write_json(&input.out, "compare.json", &summary)?;
            for r in &c.rmse {
                println!("{:>10}  RMSE {}", r.model, r.rmse.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into()));
            }
        }
        Command::Simulate { family, n, seed, params, out } => {
            let spec = synthetic_spec(&family, n, seed, &params)?;
            let (series, truth) = generate(&spec)?;
            write_series_csv(&out.join("series.csv"), series.samples())?;
            write_json(&out, "truth.json", &truth)?;
            println!("{} samples of {} written to {}", series.len(), truth.family, out.display());
        }
        Command::Run { config, input, out, seed, mode, unit } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            if let Some(v) = input {
                cfg.input = v;
            }
            if let Some(v) = out {
                cfg.output_dir = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = mode {
                cfg.mode = v;
            }
            if let Some(v) = unit {
                cfg.unit = v;
            }
            if cfg.input.as_os_str().is_empty() {
                return Err(Error::InvalidArgument("no input file given (config `input` or --input)".into()));
            }
            let report = run_pipeline(&cfg)?;
            match (&report.failed_stage, &report.error) {
                (Some(stage), Some(e)) => eprintln!("{:?} at {stage:?}: {e}", report.status),
                _ => println!("complete: report written to {}", cfg.output_dir.join("report.json").display()),
            }
            if let Some(more) = report.required_increment {
                println!("collect at least {more} more samples");
            }
            return Ok(report.exit_code() as u8);
        }
        Command::Schema => {
            let text = serde_json::to_string_pretty(&report_schema())?;
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InsufficientData(_) | Error::NoFeasibleSelection(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
