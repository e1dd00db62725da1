use std::path::Path;
use std::process::{Command, Output};

fn evtchan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtchan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = evtchan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, n: usize, seed: u64, params: &[&str]) -> String {
    let (n, seed) = (n.to_string(), seed.to_string());
    let mut args = vec!["simulate", "--family", "gpd_tail_splice", "-n", &n, "--seed", &seed, "-o"];
    let d = dir.to_str().unwrap();
    args.push(d);
    for p in params {
        args.extend(["--param", p]);
    }
    ok(&args);
    dir.join("series.csv").to_str().unwrap().to_string()
}

#[test]
fn threshold_scan_writes_scan_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 50_000, 1, &[]);
    let out = dir.path().to_str().unwrap();
    ok(&["threshold-scan", "-i", &input, "-o", out, "--grid-points", "30"]);
    let text = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["u", "k", "mean_excess"]);
    assert!(header.contains(&"xi") && header.contains(&"sigma_star") && header.contains(&"status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));
    let decision = json(&dir.path().join("threshold.json"));
    assert!(decision["u0"].is_f64());
}

#[test]
fn simulated_splice_fit_recovers_shape() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 200_000, 2, &["xi=0.2", "u_star=-2"]);
    let out = dir.path().to_str().unwrap();
    ok(&["fit", "-i", &input, "-o", out, "-u", "-2"]);
    let truth = json(&dir.path().join("truth.json"));
    assert_eq!(truth["tail"]["xi"], 0.2);
    let fit = json(&dir.path().join("fit.json"));
    let xi = fit["fit"]["params"]["xi"].as_f64().unwrap();
    let se = fit["fit"]["se_xi"].as_f64().unwrap();
    assert!((xi - 0.2).abs() <= 3.0 * se, "{xi} ± {se}");
    assert_eq!(fit["mirrored_shape"].as_f64().unwrap(), -xi);
}

#[test]
fn compare_emits_cdf_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 50_000, 3, &[]);
    let out = dir.path().to_str().unwrap();
    ok(&["compare", "-i", &input, "-o", out]);
    let text = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "power,empirical,composite,weibull,rician");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
        for (c, (next, prev)) in w[1].iter().zip(&w[0]).enumerate().skip(1) {
            assert!(next >= prev, "column {c} not monotone");
        }
    }
    assert!(rows.iter().all(|r| r[1..].iter().all(|p| (0.0..=1.0).contains(p))));
    let summary = json(&dir.path().join("compare.json"));
    assert_eq!(summary["rmse"].as_array().unwrap().len(), 3);
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), 60_000, 0, &["sigma=1", "u_star=-1.2816"]);
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "seed = 0\n[mssd]\nM = 20\nK = 50\ngrid_points = 10\nm = 1e4\n").unwrap();
    let out = dir.path().join("complete");
    let o = evtchan(&["run", "-c", config.to_str().unwrap(), "-i", &input, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("report.json"))["status"], "complete");

    let short = dir.path().join("short");
    std::fs::create_dir_all(&short).unwrap();
    let short_input = simulate(&short, 500, 5, &[]);
    let o = evtchan(&["run", "-i", &short_input, "-o", short.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&short.join("report.json"))["status"], "collect_more_data");

    let o = evtchan(&["run", "-i", "/nonexistent/series.csv", "-o", dir.path().join("failed").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_arguments_fail() {
    let o = evtchan(&["simulate", "--family", "cauchy"]);
    assert_eq!(o.status.code(), Some(1));
    let o = evtchan(&["simulate", "--family", "weibull", "--param", "nu=2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!evtchan(&["fit"]).status.success());
}

#[test]
fn schema_is_json() {
    let o = ok(&["schema"]);
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema["properties"]["status"].is_object());
}
