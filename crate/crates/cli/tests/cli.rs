use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn glevy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glevy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(config(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn validate_two_measure_example() {
    let out = glevy(&[
        "validate",
        "--config",
        config("two_measure.json").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&out);
    assert_eq!(r["results"]["c_lower"], 0.5);
    assert_eq!(r["results"]["c_upper"], 1.0);
    assert_eq!(r["passed"], true);
    for c in r["checks"].as_array().unwrap() {
        assert!(c["margin"].is_number() && c["tolerance"].is_number(), "{c}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = glevy(&["frobnicate", "--config", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = glevy(&[
        "solve",
        "--config",
        dir.path().join("none.json").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_schema = write_config(dir.path(), "quadratic.json", |v| v["schema"] = 2.into());
    assert_eq!(
        glevy(&["solve", "--config", bad_schema.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let unknown_field = write_config(dir.path(), "jump.json", |v| v["grid"]["nxx"] = 3.into());
    assert_eq!(
        glevy(&["solve", "--config", unknown_field.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let no_mc = write_config(dir.path(), "two_measure.json", |v| {
        v.as_object_mut().unwrap().remove("mc");
    });
    assert_eq!(
        glevy(&["duality", "--config", no_mc.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(glevy(&["solve"]).status.code(), Some(2));
}

#[test]
fn solve_writes_report_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("quad.json");
    let out = glevy(&[
        "solve",
        "--config",
        config("quadratic.json").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let u = r["results"]["u00"].as_f64().unwrap();
    assert!((u - 0.5).abs() <= 1e-2, "{u}");
    assert!(r["results"]["scheme_tol"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("quad.u.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x,u,Du,D2u"));
    assert!(csv.lines().count() > 241);
}

#[test]
fn duality_on_quadratic_benchmark() {
    let out = glevy(&[
        "duality",
        "--config",
        config("quadratic.json").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&out);
    for p in r["results"]["policies"].as_array().unwrap() {
        if p["name"] != "greedy" {
            assert!(p["violation"].as_f64().unwrap() <= 0.0, "{p}");
        }
    }
}

#[test]
fn failed_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let strict = write_config(dir.path(), "quadratic.json", |v| {
        v["checks"] = serde_json::json!({ "greedy_gap_tol": -1.0 });
    });
    let out = glevy(&["duality", "--config", strict.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn numeric_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let short = write_config(dir.path(), "two_times.json", |v| {
        v["lattice"]["n_max"] = 1.into()
    });
    let out = glevy(&["expect", "--config", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn same_seed_gives_identical_reports() {
    let run = |threads: &str| {
        let out = glevy(&[
            "simulate",
            "--config",
            config("two_measure.json").to_str().unwrap(),
            "--seed",
            "99",
            "--threads",
            threads,
        ]);
        assert_eq!(out.status.code(), Some(0));
        let mut r = report(&out);
        r.as_object_mut().unwrap().remove("wall_clock_s");
        r.to_string()
    };
    let a = run("1");
    assert_eq!(a, run("3"));
    assert!(a.contains("\"seed\":99"));
}

#[test]
fn expect_on_two_times() {
    let out = glevy(&[
        "expect",
        "--config",
        config("two_times.json").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&out);
    assert!(r["results"]["value"].as_f64().unwrap().is_finite());
    assert_eq!(r["results"]["n"], 2);
}
