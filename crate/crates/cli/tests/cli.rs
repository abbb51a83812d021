use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn opamp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opamp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// x* of the last iteration in a design report.
fn final_x(report: &Value) -> &serde_json::Map<String, Value> {
    let it = report["iterations"].as_array().unwrap().last().unwrap();
    it["opt"]["x_star"].as_object().unwrap()
}

#[test]
fn derive_prints_the_simplified_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = opamp(dir.path(), &["derive", "mzc"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for needle in ["a0 ~ G1*G2", "b1 ~ Cm*G2", "b2 ~ CL*Cm + CL*G2/omega_t", "Hypotheses", "Metric formulas"] {
        assert!(out.contains(needle), "missing `{needle}`:\n{out}");
    }
}

#[test]
fn derive_smc_has_two_poles_and_one_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = opamp(dir.path(), &["derive", "smc"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let pz = out.split("Poles and zeros").nth(1).unwrap().split("Metric formulas").next().unwrap();
    let count = |p: &str| pz.lines().filter(|l| l.trim_start().starts_with(p)).count();
    assert_eq!((count("p"), count("z")), (2, 1), "{pz}");
}

#[test]
fn malformed_netlist_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.net"), "var G1 kind=gm\nstage g1 in=vin out=vout gm=G1 gain=oops\n").unwrap();
    let o = opamp(dir.path(), &["derive", "bad.net"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = opamp(dir.path(), &["report", "nope.json"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn design_accepts_and_simulate_reproduces_the_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let o = opamp(dir.path(), &["design", "mzc", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("ACCEPT"));
    let report = read_json(&dir.path().join("mzc.report.json"));
    let iterations = report["iterations"].as_array().unwrap();
    assert!(!iterations.is_empty() && iterations.len() <= 3);
    let reported_pm = iterations.last().unwrap()["measured"]["pm_deg"].as_f64().unwrap();

    let o = opamp(dir.path(), &["simulate", "mzc", "mzc.report.json", "--out", "sim"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // Optimized points sit on bounds; that must not read as out of range.
    assert!(!stderr(&o).contains("outside"), "{}", stderr(&o));
    let sim = read_json(&dir.path().join("sim.json"));
    let pm = sim["measured"]["pm_deg"].as_f64().unwrap();
    assert!((pm - reported_pm).abs() < 1e-6, "{pm} vs {reported_pm}");
    let csv = fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "freq_hz,mag_db,phase_deg");

    let o = opamp(dir.path(), &["report", "mzc.report.json"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("iteration") && out.contains("measured"), "{out}");
}

#[test]
fn same_seed_gives_identical_points() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.json", "b.json"] {
        let o = opamp(dir.path(), &["design", "mzc", "--seed", "5", "--out", out]);
        assert!(matches!(o.status.code(), Some(0 | 3)), "{}", stderr(&o));
    }
    let (a, b) = (read_json(&dir.path().join("a.json")), read_json(&dir.path().join("b.json")));
    assert_eq!(final_x(&a), final_x(&b));
}

#[test]
fn impossible_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.txt"), "gain_min_db = 200\n").unwrap();
    let o = opamp(dir.path(), &["design", "mzc", "--spec", "spec.txt", "--out", "r.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("REJECT"));
}

#[test]
fn bad_spec_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.txt"), "gain = 60\n").unwrap();
    let o = opamp(dir.path(), &["design", "mzc", "--spec", "spec.txt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_stage_sweep_follows_one_pole() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.txt"), "G1 = 100u\nA1 = 60\n").unwrap();
    let o = opamp(dir.path(), &["simulate", "single_stage", "v.txt", "--ppd", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"), "{}", stderr(&o));
    let (g1, a1, cl, rl) = (100e-6, 60.0, 10e-12, 10e6);
    let g0 = g1 / a1 + 1.0 / rl;
    let dc = g1 / g0;
    let pole_hz = g0 / cl / (2.0 * PI);
    let csv = fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let r = v[0] / pole_hz;
        let mag = 20.0 * (dc / (1.0 + r * r).sqrt()).log10();
        assert!((v[1] - mag).abs() < 1e-6, "{line}: expected {mag} dB");
    }
}

#[test]
fn out_of_range_values_warn_but_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.txt"), "G1 = 1\nA1 = 60\n").unwrap();
    let o = opamp(dir.path(), &["simulate", "single_stage", "v.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("outside its range"));
}

#[test]
fn unbound_variable_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.txt"), "G1 = 100u\n").unwrap();
    let o = opamp(dir.path(), &["simulate", "single_stage", "v.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("A1"), "{}", stderr(&o));
}
