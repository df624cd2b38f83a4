use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn voidlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voidlab"))
        .current_dir(dir)
        .env_remove("VOIDLAB_OUT")
        .args(args)
        .output()
        .expect("spawn voidlab")
}

fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let out = voidlab(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join(String::from_utf8(out.stdout).unwrap().trim())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn checksums(manifest: &Path) -> Vec<(String, String)> {
    json(manifest)["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["name"].as_str().unwrap().into(), f["sha256"].as_str().unwrap().into()))
        .collect()
}

/// Header row after the `#` preamble.
fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .to_string()
}

#[test]
fn hydro_at_time_zero_writes_initial_snapshot_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = ok(tmp.path(), &["run", "hydro", "--length", "8", "--t-max", "0", "--out", "h"]);
    assert!(m.ends_with("h/manifest.json"));
    let dir = tmp.path().join("h");
    assert_eq!(header(&dir.join("profiles.csv")), "t,x,n_left,n_right");
    assert_eq!(header(&dir.join("collapse.csv")), "t,eta,n");
    let text = std::fs::read_to_string(dir.join("profiles.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("0,")).collect();
    assert_eq!(rows.len(), 8);
    let names: Vec<String> = checksums(&m).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"profiles.csv".to_string()));
    let manifest = json(&m);
    assert_eq!(manifest["config"]["command"], "hydro");
    assert_eq!(manifest["config"]["params"]["length"], 8);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn rerunning_a_manifest_reproduces_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let m = ok(
        tmp.path(),
        &["replica", "--length", "6", "--t-max", "4", "--gamma-z", "0.2", "--out", "a"],
    );
    let again = ok(tmp.path(), &["--config", m.to_str().unwrap(), "--out-root", "b"]);
    assert_eq!(checksums(&m), checksums(&again));
    assert_eq!(json(&m)["config"], json(&again)["config"]);
}

#[test]
fn monte_carlo_runs_are_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["magnon", "--length", "64", "--t-max", "10", "--samples", "40", "--seed", "3", "--out", out]
    };
    let a = ok(tmp.path(), &args("a"));
    let b = ok(tmp.path(), &args("b"));
    assert_eq!(checksums(&a), checksums(&b));
    assert_eq!(header(&tmp.path().join("a/survival.csv")), "t,P,stderr");
}

#[test]
fn checksums_follow_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(tmp.path(), &["replica", "--length", "4", "--t-max", "3", "--out", "a"]);
    let b = ok(tmp.path(), &["replica", "--length", "4", "--t-max", "3", "--gamma-z", "0.3", "--out", "b"]);
    let (ca, cb) = (checksums(&a), checksums(&b));
    assert_eq!(ca.len(), cb.len());
    for ((na, sa), (nb, sb)) in ca.iter().zip(&cb) {
        assert_eq!(na, nb);
        assert_ne!(sa, sb, "{na}");
    }
}

#[test]
fn flags_override_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "command": "replica", "params": {"length": 6, "t_max": 2}}"#,
    )
    .unwrap();
    let m = ok(tmp.path(), &["--config", "cfg.json", "replica", "--length", "4", "--out", "o"]);
    let params = &json(&m)["config"]["params"];
    assert_eq!(params["length"], 4);
    assert_eq!(params["t_max"], 2);
    assert_eq!(params["source"], 2);
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.json"),
        r#"{"version": 1, "command": "replica", "params": {"lenght": 6}}"#,
    )
    .unwrap();
    let out = voidlab(tmp.path(), &["--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lenght"));

    std::fs::write(tmp.path().join("other.json"), r#"{"version": 1, "command": "bound"}"#).unwrap();
    let out = voidlab(tmp.path(), &["--config", "other.json", "hydro"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(tmp.path().join("old.json"), r#"{"version": 0, "command": "bound"}"#).unwrap();
    assert_eq!(voidlab(tmp.path(), &["--config", "old.json"]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(voidlab(tmp.path(), &["hydro", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(voidlab(tmp.path(), &["hydro", "--length", "many"]).status.code(), Some(2));
    let cap = voidlab(tmp.path(), &["replica", "--length", "12", "--out", "r"]);
    assert_eq!(cap.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&cap.stderr).contains("capacity"));
    let model = voidlab(tmp.path(), &["floquet", "--model", "D"]);
    assert_eq!(model.status.code(), Some(2));
    assert_eq!(voidlab(tmp.path(), &["figure", "--name", "S9"]).status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_voidlab"))
        .current_dir(tmp.path())
        .env("VOIDLAB_OUT", "elsewhere")
        .args(["bound", "--t", "50"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("elsewhere/bound/bound.json").exists());
    assert_eq!(header(&tmp.path().join("elsewhere/bound/bound.csv")), "t,ell_star,log_bound");
}

fn diagnostics(dir: &Path, args: &[&str]) -> Value {
    let out = voidlab(dir, args);
    assert!(out.status.success());
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn validate_reports_capacity_and_bad_tags() {
    let tmp = tempfile::tempdir().unwrap();
    let r = diagnostics(tmp.path(), &["validate", "replica", "--length", "20", "--backend", "dense"]);
    let d = r["diagnostics"].as_array().unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0]["level"], "warning");
    let msg = d[0]["message"].as_str().unwrap();
    assert!(msg.contains("6^20") && msg.contains("3656158440062976"), "{msg}");

    let r = diagnostics(tmp.path(), &["validate", "floquet", "--model", "Q"]);
    let msg = r["diagnostics"][0]["message"].as_str().unwrap();
    assert!(msg.contains("A|B|C|custom"), "{msg}");

    for args in [
        vec!["validate", "replica"],
        vec!["validate", "floquet", "--model", "B", "--length", "10"],
        vec!["validate", "hydro", "--length", "2000", "--t-max", "1000"],
        vec!["validate", "bound"],
    ] {
        let r = diagnostics(tmp.path(), &args);
        assert_eq!(r["diagnostics"].as_array().unwrap().len(), 0, "{args:?}: {r}");
    }
}

#[test]
fn producer_dialects() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["floquet", "--length", "6", "--t-max", "3", "--mu=-0.4", "--out", "f"]);
    assert_eq!(header(&d.join("f/correlator.csv")), "t,x,re,im");
    assert_eq!(header(&d.join("f/sumsq.csv")), "t,sumsq,stderr");
    ok(d, &["replica", "--length", "4", "--t-max", "2", "--out", "r"]);
    assert_eq!(header(&d.join("r/z.csv")), "t,x,Z");
    assert_eq!(header(&d.join("r/zsum.csv")), "t,Zsum");
    ok(
        d,
        &["gas-corr", "--length", "100", "--density", "0.4", "--samples", "2", "--steps", "40", "--lags", "0,10", "--out", "g"],
    );
    assert_eq!(header(&d.join("g/structure.csv")), "t,x,corr");
}

#[test]
fn analyze_reads_producer_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["floquet", "--length", "6", "--t-max", "4", "--out", "f"]);
    ok(d, &["analyze", "--in", "f/correlator.csv", "--op", "msd", "--column", "abs2", "--out", "m"]);
    let text = std::fs::read_to_string(d.join("m/msd.csv")).unwrap();
    let first = text.lines().find(|l| l.starts_with("0,")).unwrap();
    assert_eq!(first, "0,0e0");
    ok(d, &["analyze", "--in", "f/sumsq.csv", "--op", "smooth", "--width", "0.5", "--out", "s"]);
    assert_eq!(header(&d.join("s/smooth.csv")), "t,sumsq,stderr");
    let m = ok(d, &["analyze", "--in", "f/sumsq.csv", "--op", "fit", "--window", "1,4", "--out", "fit"]);
    assert!(json(&d.join("fit/fit.json"))["alpha"].is_number());
    assert_eq!(json(&m)["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn figure_s4_builds_the_alpha_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["run", "figure", "--name", "S4", "--quick", "--out", "s4"]);
    let dir = tmp.path().join("s4");
    assert_eq!(header(&dir.join("alpha.csv")), "t,alpha,stderr");
    let fig = json(&dir.join("figure.json"));
    assert_eq!(fig["figure"], "S4");
    for p in fig["panels"].as_array().unwrap() {
        assert!(dir.join(p["file"].as_str().unwrap()).exists());
    }
    assert!(json(&dir.join("alpha.json"))["mean_alpha"].is_number());
}
