use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brenier-bounds"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("BRENIER_BOUNDS_JOBS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn as_f64(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn bounds_identity_global_value() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["bounds"], &configs().join("verify/identity.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports = json(&out.path().join("identity.bounds.json"));
    let global = reports.as_array().unwrap().iter().find(|r| r["regime"] == "global").unwrap();
    // C_V2 = c_W2 = 2, n = d = D = 1.
    assert!((as_f64(&global["bound"]) - 11401.416896030409).abs() < 1e-6);
    let rows = csv_rows(&out.path().join("identity.bounds.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "global");
}

#[test]
fn bounds_rejects_d_above_big_d() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["bounds"], &configs().join("counterexample.toml"), out.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("requires d <= D"), "{}", stderr(&o));
}

#[test]
fn bounds_endpoint_for_infinite_big_d() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["bounds", "--format", "json"], &configs().join("verify/cauchy_to_gaussian.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports = json(&out.path().join("cauchy_to_gaussian.bounds.json"));
    let endpoint = reports.as_array().unwrap().iter().find(|r| r["regime"] == "endpoint_poly_log").unwrap();
    // sqrt(C_V2 / c_W2) = sqrt(2 / 1).
    assert!((as_f64(&endpoint["bound"]) - 2f64.sqrt()).abs() < 1e-12);
    assert!(!out.path().join("cauchy_to_gaussian.bounds.csv").exists());
}

#[test]
fn bounds_void_exits_2() {
    // A quartic target has an unbounded growth constant: the global bound is void.
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("r,u,du\n");
    for i in 0..=3000 {
        let r = i as f64 * 0.01;
        table.push_str(&format!("{r},{},{}\n", r * r + 0.1 * r.powi(4), 2.0 * r + 0.4 * r.powi(3)));
    }
    std::fs::write(dir.path().join("quartic.csv"), table).unwrap();
    let cfg = write_scenario(
        dir.path(),
        r#"
[scenario]
name = "quartic"
n = 1
d = 2
D = 5
R = 3
V = { family = "quadratic", a = 1.0 }
W = { family = "tabulated", csv = "quartic.csv", hess_upper = "inf", hess_lower = 2.0 }
"#,
    );
    let o = run(&["bounds"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("void bound"), "{}", stderr(&o));
}

#[test]
fn transport_identity_is_identity() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["transport"], &configs().join("verify/identity.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.path().join("identity.map.csv"));
    assert!(rows.len() >= 100);
    for r in &rows {
        let (x, t): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((x - t).abs() <= 1e-10 * x.max(1.0), "r = {x}, t = {t}");
    }
    let text = std::fs::read_to_string(out.path().join("identity.map.csv")).unwrap();
    assert!(text.starts_with("r,t,t_prime,residual\n") && !text.contains('\r'));
}

#[test]
fn transport_gaussian_scaling_lipschitz_two() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["transport"], &configs().join("verify/gaussian_scaling.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = json(&out.path().join("gaussian_scaling.lipschitz.json"));
    assert!((as_f64(&rep["lipschitz_local"]["value"]) - 2.0).abs() < 1e-6);
    assert!(rep.get("map").is_none());
}

#[test]
fn transport_counterexample_shows_power_growth() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["transport"], &configs().join("counterexample.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = json(&out.path().join("counterexample_d3.lipschitz.json"));
    // t(r) ~ r^(2d - 1) with d = 3, D = 1.
    assert!((as_f64(&rep["slope"]["slope"]) - 5.0).abs() < 0.05);
    assert_eq!(csv_rows(&out.path().join("counterexample_d3.map.csv")).len(), 600);
}

#[test]
fn transport_json_only_embeds_the_map() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["transport", "--format", "json"], &configs().join("verify/shifted_line.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = json(&out.path().join("shifted_line.lipschitz.json"));
    assert_eq!(rep["domain"], "line");
    let t = rep["map"]["t"].as_array().unwrap();
    let x = rep["map"]["r_grid"].as_array().unwrap();
    for (x, t) in x.iter().zip(t) {
        assert!((as_f64(x) - 1.0 - as_f64(t)).abs() < 1e-8);
    }
    assert!(!out.path().join("shifted_line.map.csv").exists());
}

#[test]
fn verify_directory_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &configs().join("verify"), out.path());
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let rows = csv_rows(&out.path().join("summary.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    for want in ["identity", "gaussian_scaling", "cauchy_to_d3", "cauchy_to_gaussian", "d3_to_d10", "log_perturbed"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    assert!(rows.iter().all(|r| r[1] == "true"));
    for r in &rows {
        let rep = json(&out.path().join(format!("{}.verify.json", r[0])));
        assert_eq!(rep["pass"], true);
        assert!(rep.get("wall_time_s").is_none());
    }
    assert!(stdout(&o).contains(&format!("verify: {0} of {0} scenarios passed", rows.len())));
}

#[test]
fn verify_broken_declaration_exits_3() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &configs().join("broken"), out.path());
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
    let rep = json(&out.path().join("broken_declaration.verify.json"));
    assert_eq!(rep["pass"], false);
}

#[test]
fn verify_empty_directory_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], dir.path(), &dir.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no scenarios found"));
}

#[test]
fn verify_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("verify/cauchy_to_d3.toml");
    assert_eq!(code(&run(&["verify", "--jobs", "1"], &cfg, a.path())), 0);
    assert_eq!(code(&run(&["verify", "--jobs", "4"], &cfg, b.path())), 0);
    for f in ["cauchy_to_d3.verify.json", "summary.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn strict_mode_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("verify/identity.toml")).unwrap();
    let cfg = write_scenario(dir.path(), &text.replace("n = 1", "n = 1\ntolerance = 3"));
    let o = run(&["bounds"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tolerance"), "{}", stderr(&o));
    let o = run(&["bounds", "--strict", "false"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn jobs_fall_back_to_environment() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_brenier-bounds"))
        .args(["verify", "--config"])
        .arg(configs().join("verify/identity.toml"))
        .arg("--out")
        .arg(out.path())
        .env("BRENIER_BOUNDS_JOBS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn sweeps_pass() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], &configs().join("sweeps"), out.path());
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let rows = csv_rows(&out.path().join("uniformity.csv"));
    assert_eq!(rows.len(), 3676);
    assert!(rows.iter().all(|r| r[8] == "true" && r[7].parse::<f64>().unwrap() <= 1e6));
    let limit = csv_rows(&out.path().join("limit_d.csv"));
    assert_eq!(limit.last().unwrap()[0].parse::<f64>().unwrap(), 1000.0);
    let caff = json(&out.path().join("caffarelli.json"));
    assert!(as_f64(&caff["final_gap"]) < 0.01);
}

#[test]
fn sweep_property_failure_exits_3() {
    // At D = d the Fathi radius exceeds the cap and is more than twice its
    // value at the largest D.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), "[sweep.limit_d]\nn = 1\nd = 1\nR = 1\nD = [1, 1000]\n");
    let o = run(&["sweep"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL limit_d fathi_radius_bounded"));
}

#[test]
fn sweep_without_sweeps_exits_1() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], &configs().join("verify/identity.toml"), out.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no sweeps found"));
}
