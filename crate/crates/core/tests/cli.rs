use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn epikit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epikit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(schema: &str, doc: &Value) {
    let schema = read_json(&root().join("schemas").join(format!("{schema}.json")));
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

#[test]
fn envelope_writes_json_csv_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = epikit(&["envelope", "--config", "configs/step.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_valid("envelope_results", &read_json(&dir.path().join("envelope.json")));
    assert_valid("envelope_config", &read_json(&dir.path().join("config.json")));
    let csv = fs::read_to_string(dir.path().join("envelope.csv")).unwrap();
    assert!(csv.starts_with("kappa,point,value,attained_at\n"));
    assert_eq!(csv.lines().count(), 1 + 5 * 41);
    assert!(!csv.contains('\r'));
}

#[test]
fn scheme_checks_pass_on_the_bundled_scheme() {
    for (cmd, cfg, schema) in [
        ("fatou-check", "configs/quadratic_fatou.json", "fatou_config"),
        ("epi-check", "configs/quadratic_epi.json", "epi_config"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = epikit(&[cmd, "--config", cfg], dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stdout));
        assert_valid("diagnostic_report", &read_json(&dir.path().join("report.json")));
        assert_valid(schema, &read_json(&dir.path().join("config.json")));
        let csv = fs::read_to_string(dir.path().join("expectations.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 16 + 1);
        assert!(csv.lines().last().unwrap().starts_with("limit,"));
    }
}

#[test]
fn tol_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let out = epikit(&["fatou-check", "--config", "configs/quadratic_fatou.json", "--tol", "0.001"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let cfg = read_json(&dir.path().join("config.json"));
    assert_eq!(cfg["scheme"]["schedules"]["tol"], 0.001);
    assert_eq!(read_json(&dir.path().join("report.json"))["schedules_used"]["tol"], 0.001);
}

fn trace_column(csv: &str, name: &str) -> Vec<Option<f64>> {
    let mut lines = csv.lines();
    let col = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().ok()).collect()
}

#[test]
fn penalty_with_unit_mean_ends_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = epikit(&["app", "penalty", "--config", "configs/penalty_m1.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let cfg = read_json(&dir.path().join("config.json"));
    assert_valid("penalty_config", &cfg);
    let spacing = cfg["spacing"].as_f64().unwrap();
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let last = trace_column(&csv, "estimate").last().copied().flatten().unwrap();
    assert!((last - 1.0).abs() <= 2.0 * spacing, "final minimizer {last}");
    assert_valid("diagnostic_report", &read_json(&dir.path().join("report.json")));
}

#[test]
fn app_outputs_validate_and_echo_round_trips() {
    for (app, schema) in [("mollify", "mollify_config"), ("sieve", "sieve_config"), ("pde", "pde_config")] {
        let first = tempfile::tempdir().unwrap();
        let out = epikit(&["app", app], first.path());
        assert_eq!(out.status.code(), Some(0), "{app}: {}", String::from_utf8_lossy(&out.stdout));
        let echo = first.path().join("config.json");
        assert_valid(schema, &read_json(&echo));
        assert_valid("diagnostic_report", &read_json(&first.path().join("report.json")));

        let second = tempfile::tempdir().unwrap();
        let out = epikit(&["app", app, "--config", echo.to_str().unwrap()], second.path());
        assert_eq!(out.status.code(), Some(0));
        for f in ["config.json", "report.json", "trace.csv"] {
            assert_eq!(
                fs::read(first.path().join(f)).unwrap(),
                fs::read(second.path().join(f)).unwrap(),
                "{app}/{f} differs after rerunning from the echoed config"
            );
        }
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = epikit(&["app", "sieve", "--seed", "100"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let seeds = read_json(&dir.path().join("config.json"))["seeds"].clone();
    assert_eq!(seeds[0], 100);
    assert_eq!(seeds[19], 119);
}

#[test]
fn malformed_config_reports_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version": 1, "weights": [0.3, 0.4, "x"]}"#).unwrap();
    let out = epikit(&["app", "penalty", "--config", bad.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"/weights/2\""));

    fs::write(&bad, r#"{"grid": {"points": [[0], [1]]}, "values": [0, 1], "kapa": [1]}"#).unwrap();
    let out = epikit(&["envelope", "--config", bad.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"/kapa\""));

    fs::write(&bad, r#"{"schema_version": 7}"#).unwrap();
    let out = epikit(&["suite", "--config", bad.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"/schema_version\""));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(epikit(&["envelope"], dir.path()).status.code(), Some(1));
    assert_eq!(epikit(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(epikit(&["app", "nope"], dir.path()).status.code(), Some(1));
    assert_eq!(epikit(&["app", "mollify", "--threads", "0"], dir.path()).status.code(), Some(1));
    assert_eq!(epikit(&["app", "pde", "--config", "/no/such/file.json"], dir.path()).status.code(), Some(1));
    assert_eq!(epikit(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn broken_upper_bound_is_a_hypothesis_gap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&root().join("configs/quadratic_epi.json"));
    for f in cfg["scheme"]["integrands"].as_array_mut().unwrap() {
        for row in f.as_array_mut().unwrap() {
            let v = row[0].as_f64().unwrap();
            row[0] = (v + 1.0).into();
        }
    }
    let path = dir.path().join("shifted.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = epikit(&["epi-check", "--config", path.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["verdict"], "hypothesis_unverified");
}

#[test]
fn weak_penalty_fails_its_conclusions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weak.json");
    fs::write(&path, r#"{"mean": 1, "theta_power": 0.01, "spacing": 0.125, "terms": 16}"#).unwrap();
    let out = epikit(&["app", "penalty", "--config", path.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["verdict"], "fail");
}
