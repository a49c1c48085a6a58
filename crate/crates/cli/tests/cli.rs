use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn illiquid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_illiquid"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = illiquid(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(args: &[&str]) -> i32 {
    let dir = TempDir::new().unwrap();
    illiquid(dir.path(), args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV file, without comments and the column header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn last_velocity(args: &[&str]) -> f64 {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), args);
    let rows = rows(&dir.path().join("curve.csv"));
    rows.last().unwrap()[2].parse().unwrap()
}

#[test]
fn curve_of_medium_firm() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["curve"]);
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(text.starts_with("# params {\"d\":1,"));
    assert!(text.lines().any(|l| l == "time_years,q_1,v_1"));
    let rows = rows(&dir.path().join("curve.csv"));
    assert_eq!(rows.len(), 501);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1], "200000");
    assert_eq!(rows[500][0], "0.5");

    let sidecar = json(&dir.path().join("curve.json"));
    for key in ["W", "mean", "variance", "err", "dp", "T*"] {
        assert!(sidecar.get(key).is_some(), "missing {key}");
    }
    assert_eq!(sidecar["T*_status"], "infinite");
    let (w, mean, var) = (
        sidecar["W"].as_f64().unwrap(),
        sidecar["mean"].as_f64().unwrap(),
        sidecar["variance"].as_f64().unwrap(),
    );
    assert!((mean - (w + 0.5 * 6.7e-8 * var)).abs() / mean < 1e-10);
}

#[test]
fn stronger_permanent_impact_buys_faster_at_the_end() {
    let base = last_velocity(&["curve"]);
    let strong = last_velocity(&["curve", "--override", "lambda_perm=8e-8"]);
    assert!(base > 0.0);
    assert!(strong > base, "{strong} <= {base}");
}

#[test]
fn reruns_are_byte_identical() {
    for args in [
        vec!["curve"],
        vec!["frontier", "--grid", "9"],
        vec!["simulate", "--paths", "2000", "--steps", "50", "--seed", "9"],
        vec!["perturbation"],
    ] {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        ok(a.path(), &args);
        ok(b.path(), &args);
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let x = fs::read(a.path().join(&name)).unwrap();
            let y = fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{args:?}: {name:?} differs");
        }
    }
}

#[test]
fn exit_codes() {
    // D < E with the horizon past T*
    assert_eq!(code(&["curve", "--override", "lambda_perm=5e-6"]), 3);
    assert_eq!(code(&["calibrate", "--target-dp", "0.5"]), 4);
    assert_eq!(code(&["curve", "--override", "risk_aversion=-1"]), 2);
    assert_eq!(code(&["curve", "--override", "gamma=0"]), 2);
    assert_eq!(code(&["curve", "--override", "nonsense=1"]), 2);
    assert_eq!(code(&["curve", "--override", "no-equals-sign"]), 2);
    assert_eq!(code(&["curve", "--input", "/nonexistent/params.json"]), 2);
    assert_eq!(code(&["perturbation", "--override", "d=2"]), 2);
}

#[test]
fn input_file_matches_builtin_benchmark() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("large.json");
    fs::write(
        &params,
        r#"{"d":1,"mu":[4],"sigma":[[20]],"gamma":[[1e-7]],"lambda_perm":[[4e-8]],
            "risk_aversion":1.83e-8,"q0":[800000],"s0":[100],"c0":-60000000,"t":0,"T":0.5}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["curve", "--input", params.to_str().unwrap()]);
    ok(&b, &["curve", "--firm", "large"]);
    assert_eq!(fs::read(a.join("curve.json")).unwrap(), fs::read(b.join("curve.json")).unwrap());
}

#[test]
fn calibration_reproduces_benchmark_risk_aversion() {
    for (firm, reported) in [("small", 2.56e-7), ("medium", 6.7e-8), ("large", 1.83e-8)] {
        let dir = TempDir::new().unwrap();
        ok(dir.path(), &["calibrate", "--firm", firm]);
        let c = json(&dir.path().join("calibration.json"));
        let star = c["lambda_star"].as_f64().unwrap();
        assert!((star / reported - 1.0).abs() < 0.05, "{firm}: {star}");
        assert!((c["achieved_dp"].as_f64().unwrap() - 0.01).abs() < 1e-5);
        let bracket = c["bracket"].as_array().unwrap();
        assert!(bracket[0].as_f64().unwrap() <= star && star <= bracket[1].as_f64().unwrap());
        assert!(c["iterations"].as_u64().is_some());
    }
}

#[test]
fn frontier_default_grid_is_monotone() {
    let dir = TempDir::new().unwrap();
    let out = illiquid(dir.path(), &["frontier"]);
    assert!(out.status.success());
    let rows = rows(&dir.path().join("frontier.csv"));
    assert_eq!(rows.len(), 61);
    let dp: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(dp.windows(2).all(|w| w[1] <= w[0]));
    assert!(rows.iter().all(|r| !r[5].contains("dp_increase")));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn oracle_check_passes_on_medium_firm() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["oracle-check"]);
    let r = json(&dir.path().join("oracle-check.json"));
    assert_eq!(r["n_steps"], 2000);
    assert!(r["relative_gap"].as_f64().unwrap() < 1e-3);
    assert!(r["curve_sup_gap"].as_f64().unwrap() < 5e-3);
    assert_eq!(r["pass"], true);
}

#[test]
fn simulation_agrees_with_analytic_moments() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["simulate", "--paths", "100000", "--seed", "42"]);
    let r = json(&dir.path().join("simulation.json"));
    assert_eq!(r["n_paths"], 100_000);
    assert!(r["z_mean"].as_f64().unwrap().abs() < 3.0);
    assert!(r["z_var"].as_f64().unwrap().abs() < 3.0);
    assert!(r["analytic_mean"].as_f64().is_some());
}

#[test]
fn perturbation_exponent_is_one_half() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["perturbation"]);
    let rows = rows(&dir.path().join("perturbation.csv"));
    assert_eq!(rows.len(), 4);
    let slope: f64 = rows[0][4].parse().unwrap();
    assert!((0.48..=0.52).contains(&slope), "{slope}");
}

#[test]
fn plots_write_gnuplot_data() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["plots", "--grid", "21"]);
    for name in ["curve.dat", "frontier.dat", "perturbation.dat"] {
        let text = fs::read_to_string(dir.path().join("plots").join(name)).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert!(!data.is_empty(), "{name}");
        assert!(data.iter().all(|l| l.split(' ').all(|c| c.parse::<f64>().is_ok())), "{name}");
    }
}
