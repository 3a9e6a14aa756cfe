use std::path::Path;
use std::process::{Command, Output};

fn saltwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saltwalk")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn optimize_compass(dir: &Path, name: &str) {
    let out = saltwalk(&["optimize", "--model", "compass", "--w1", "1", "--w2", "1", "--balance", "--out", dir.to_str().unwrap(), "--name", name]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn missing_model_is_an_input_error() {
    let out = saltwalk(&["optimize", "--model", "/no/such/model.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error[input]: model not found"), "{}", stderr(&out));
}

#[test]
fn models_lists_presets() {
    let out = saltwalk(&["models"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["bouncing_ball", "compass", "five_link"] {
        assert!(text.contains(name));
    }
}

#[test]
fn ball_saltation_report_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("salt.toml");
    let out = saltwalk(&["saltation", "--model", "bouncing_ball", "--state", "0,-2", "--restitution", "0.5", "--out", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let value: toml::Value = toml::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let row = |r: usize| -> Vec<f64> { value["saltation"][r].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect() };
    let (e, g, v) = (0.5, 9.81, -2.0);
    let expected = [[-e, 0.0], [-(1.0 + e) * g / v, -e]];
    for r in 0..2 {
        for (got, want) in row(r).iter().zip(expected[r]) {
            assert!((got - want).abs() < 1e-6, "row {r}: {got} vs {want}");
        }
    }
    let sg: Vec<f64> = value["guard_saltation"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();
    assert!((sg[0] - (1.0 + e)).abs() < 1e-6);
    assert!((sg[1] - (1.0 + e) * g / v).abs() < 1e-6);
}

#[test]
fn saltation_needs_exactly_one_source() {
    let out = saltwalk(&["saltation", "--model", "bouncing_ball"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_state_length_is_a_mismatch() {
    let out = saltwalk(&["saltation", "--model", "compass", "--state", "0,1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("error[mismatch]"));
}

#[test]
fn forced_non_convergence_dumps_partial_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let out = saltwalk(&["optimize", "--model", "compass", "--max-iter", "1", "--out", dir.path().to_str().unwrap(), "--name", "short"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("error[non_convergence]"));
    assert!(dir.path().join("short.partial.gait.toml").exists());
    assert!(dir.path().join("short.report.toml").exists());
    assert!(!dir.path().join("short.gait.toml").exists());
}

#[test]
fn bad_terrain_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let gait = dir.path().join("g.gait.toml");
    std::fs::write(&gait, "").unwrap();
    let out = saltwalk(&["simulate", "--model", "compass", "--gait", gait.to_str().unwrap(), "--terrain", "bumpy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimize_simulate_robustness_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    optimize_compass(d, "c");
    let gait = d.join("c.gait.toml");
    let g = gait.to_str().unwrap();

    let trace = d.join("trace.csv");
    let out = saltwalk(&["simulate", "--model", "compass", "--gait", g, "--steps", "10", "--out", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let events = std::fs::read_to_string(d.join("trace.events.csv")).unwrap();
    let impacts = events.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(impacts, 10);

    let out = saltwalk(&["robustness", "--model", "compass", "--gait", g, "--out", d.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(d.join("c.robustness.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["flat", "slope+1deg", "slope-1deg", "step+0.020m", "step-0.020m"]);
    assert!(csv.starts_with("# saltwalk robustness schema 1.0"));
    assert!(d.join("c.portrait.csv").exists());
    let report: toml::Value = toml::from_str(&std::fs::read_to_string(d.join("c.robustness.toml")).unwrap()).unwrap();
    assert!(report["poincare"]["spectral_radius"].as_float().unwrap() < 1.0);

    let out = saltwalk(&["simulate", "--model", "five_link", "--gait", g]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn conditions_file_with_unknown_major_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    optimize_compass(d, "c");
    let conditions = d.join("conds.toml");
    std::fs::write(&conditions, "schema_version = \"2.0\"\n[[conditions]]\nslope_deg = 0.0\nstep_height = 0.0\n").unwrap();
    let out = saltwalk(&[
        "robustness", "--model", "compass", "--gait", d.join("c.gait.toml").to_str().unwrap(),
        "--conditions", conditions.to_str().unwrap(), "--no-poincare", "--out", d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        optimize_compass(d, "c");
        let out = saltwalk(&["robustness", "--model", "compass", "--gait", d.join("c.gait.toml").to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(out.status.success());
    }
    for file in ["c.gait.toml", "c.report.toml", "c.robustness.toml", "c.robustness.csv", "c.robustness.txt", "c.portrait.csv", "c.portrait.band.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}
