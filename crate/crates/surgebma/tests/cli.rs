use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use surgebma::fixtures::write_fixture;
use surgebma::io::{read_covariate_csv, read_hourly_csv};
use surgebma::pipeline::{COVARIATES, EXCEEDANCES, PRIORS, STATION_MLE};
use surgebma::Error;

const FAST_SAMPLER: &str = "n_iterations = 4000\nn_chains = 3\nthinned_size = 1000";
const FAST_HAZARD: &str = "mixture_size = 20000\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surgebma")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config_hash(o: &Output) -> String {
    stdout(o).lines().find_map(|l| l.strip_prefix("config hash ")).expect("hash line").to_string()
}

/// Fixture directory shared by the tests; treated as read-only.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        write_fixture(&dir, 5).unwrap();
        dir
    })
}

/// Writes a variant of the fixture config with `extra` appended and
/// `edits` applied, returning its path.
fn variant(name: &str, edits: &[(&str, &str)], extra: &str) -> PathBuf {
    let dir = fixture();
    let mut text = fs::read_to_string(dir.join("config.toml")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "fixture config lacks `{from}`");
        text = text.replace(from, to);
    }
    text.push_str(extra);
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn fast_config(name: &str, extra: &str) -> PathBuf {
    variant(
        name,
        &[("projection_year = 2065", &format!("projection_year = 2065\n{FAST_HAZARD}")), ("n_iterations = 40000", FAST_SAMPLER)],
        &format!("\n{extra}"),
    )
}

/// Output directory holding preprocessing and prior artifacts for ST and
/// NS1-time; tests copy it before running later stages.
fn prepared() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let out = tempfile::tempdir().unwrap().keep();
        let config = fast_config("prepared", "");
        for stage in ["preprocess", "fit-priors"] {
            let o = run(&[
                "-c",
                config.to_str().unwrap(),
                "--output-dir",
                out.to_str().unwrap(),
                "--structure",
                "ST",
                "--structure",
                "NS1-time",
                stage,
            ]);
            assert!(o.status.success(), "{stage}: {}", stderr(&o));
        }
        out
    })
}

fn copy_prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in [EXCEEDANCES, COVARIATES, PRIORS, STATION_MLE] {
        fs::copy(prepared().join(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn args<'a>(config: &'a Path, out: &'a Path, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["-c", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap(), "--structure", "ST", "--structure", "NS1-time"];
    v.extend_from_slice(rest);
    v
}

#[test]
fn hourly_parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    fs::write(&path, "timestamp,level_m\n2000-01-01T00:00,0.5\n2000-01-01T01:00,abc\n").unwrap();
    match read_hourly_csv(&path) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("abc"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(&path, "timestamp,level_m\n2000-01-01T00:00,0.5\n2000-01-01T00:00,0.6\n").unwrap();
    assert!(matches!(read_hourly_csv(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn covariate_parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    fs::write(&path, "year,month,value\n1990,1,0.1\n1990,13,0.2\n").unwrap();
    let err = read_covariate_csv(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    assert!(err.to_string().contains(":3:"), "{err}");
}

#[test]
fn empty_hourly_file_exits_2() {
    fs::write(fixture().join("empty.csv"), "").unwrap();
    let config = variant("empty", &[("station_hourly.csv", "empty.csv")], "");
    let out = tempfile::tempdir().unwrap();
    let o = run(&["-c", config.to_str().unwrap(), "--output-dir", out.path().to_str().unwrap(), "preprocess"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty input"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let unknown = variant("unknown_key", &[("n_iterations = 40000", "n_iterationz = 10")], "");
    let o = run(&["-c", unknown.to_str().unwrap(), "preprocess"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = run(&["-c", fixture().join("no_such.toml").to_str().unwrap(), "preprocess"]);
    assert_eq!(o.status.code(), Some(2));

    let base = fixture().join("config.toml");
    let o = run(&["-c", base.to_str().unwrap(), "--structure", "NS4-time", "preprocess"]);
    assert_eq!(o.status.code(), Some(2));

    let window = variant("window", &[("start = 1928", "start = 2020")], "");
    let o = run(&["-c", window.to_str().unwrap(), "preprocess"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_without_artifacts_exits_2_and_names_them() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture().join("config.toml");
    let o = run(&["-c", config.to_str().unwrap(), "--output-dir", out.path().to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("evidence.json"), "{}", stderr(&o));

    let o = run(&["-c", config.to_str().unwrap(), "--output-dir", out.path().to_str().unwrap(), "calibrate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(EXCEEDANCES), "{}", stderr(&o));
}

#[test]
fn failed_gate_exits_1_and_force_downgrades_to_warning() {
    let config = fast_config("strict_gate", "psrf_gate = 0.5\n");
    let out = copy_prepared();
    let o = run(&args(&config, out.path(), &["calibrate"]));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("PSRF"), "{}", stderr(&o));

    let o = run(&args(&config, out.path(), &["--force", "calibrate"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("warning:"), "{}", stdout(&o));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("calibration/ST.diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["diagnostics"]["forced"], true);
    assert!(diag["warning"].as_str().is_some_and(|w| w.contains("--force")));
}

#[test]
fn staged_run_writes_hashed_reports() {
    let config = fast_config("staged", "");
    let out = copy_prepared();
    let mut hash = None;
    for stage in ["calibrate", "evidence", "project", "report"] {
        let o = run(&args(&config, out.path(), &["--seed", "9", stage]));
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        let h = config_hash(&o);
        assert_eq!(hash.get_or_insert(h.clone()), &h, "hash changed at {stage}");
        if stage == "report" {
            assert!(stdout(&o).contains("need all 13 structures"), "{}", stdout(&o));
        }
    }
    let hash = hash.unwrap();
    let dir = out.path();

    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("calibration/NS1-time.diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["seed"], 9);
    assert_eq!(diag["config_hash"], hash.as_str());
    assert_eq!(diag["config"]["run"]["seed"], 9);

    let evidence: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("evidence.json")).unwrap()).unwrap();
    let total: f64 = evidence["structures"].as_array().unwrap().iter().map(|r| r["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");

    let table = fs::read_to_string(dir.join("report/return_levels.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some(format!("# config_hash={hash}").as_str()));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 8, "{header:?}");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        assert_eq!(row.len(), 8);
        assert!(row[1..].windows(2).all(|w| w[0] <= w[1]), "quantiles not ordered: {row:?}");
    }

    let weights = fs::read_to_string(dir.join("report/structure_weights.csv")).unwrap();
    let total: f64 = weights.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5, "structure weights sum to {total}");
    assert!(!dir.join("report/aggregate_weights.csv").exists());

    for name in ["evidence.json", "projection.json", "run_config.json", "report/return_curve.json", "calibration/ST.csv"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        assert!(text.contains(&hash), "{name} lacks the config hash");
    }
}

#[test]
fn flags_override_config_and_change_the_hash() {
    let config = fixture().join("config.toml");
    let out = copy_prepared();
    let a = run(&args(&config, out.path(), &["--seed", "1", "evidence"]));
    let b = run(&args(&config, out.path(), &["--seed", "2", "evidence"]));
    // no ensembles yet, so both fail on input, after the hash is fixed
    assert_eq!(a.status.code(), Some(2));
    assert_eq!(b.status.code(), Some(2));
    assert!(stderr(&a).contains("calibration/ST.csv"), "{}", stderr(&a));

    let run_config = |seed: &str| {
        let o = run(&args(&config, out.path(), &["--seed", seed, "--workers", "2", "preprocess"]));
        assert!(o.status.success(), "{}", stderr(&o));
        config_hash(&o)
    };
    let h1 = run_config("1");
    let h2 = run_config("2");
    assert_ne!(h1, h2);
    let o = run(&args(&config, out.path(), &["--seed", "1", "--workers", "1", "preprocess"]));
    assert_eq!(config_hash(&o), h1, "worker count must not change the hash");
}

#[test]
fn simulate_writes_a_runnable_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("fx");
    let o = run(&["--seed", "3", "simulate", "--out", target.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("config.toml").is_file());
    assert!(target.join("stations").read_dir().unwrap().count() >= 27);
    let o = run(&["-c", target.join("config.toml").to_str().unwrap(), "preprocess"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("out").join(EXCEEDANCES).is_file());
}
