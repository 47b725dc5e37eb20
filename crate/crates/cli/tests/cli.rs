use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sap")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report_auc(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("auc_pd_pf,auc_pd_tau,auc_pf_tau,auc_oa,auc_snpr"));
    lines.next().unwrap().split(',').next().unwrap().parse().unwrap()
}

#[test]
fn fixture_detect_eval_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(sap(&["fixture", "--out", "fx"], d));
    let scene_before = fs::read(d.join("fx/scene.raw")).unwrap();

    ok(sap(&["dict", "--input", "fx/scene", "--out", "work/bg"], d));
    assert!(d.join("work/bg.dict.json").exists() && d.join("work/bg.latent.raw").exists());
    ok(sap(&["detect", "--input", "fx/scene", "--dict", "work/bg", "--prior", "fallback:0", "--out", "work/map"], d));
    ok(sap(&["eval", "--scores", "work/map", "--truth", "fx/truth", "--report", "work/report.csv"], d));
    let auc = report_auc(&d.join("work/report.csv"));
    assert!(auc >= 0.9, "auc_pd_pf = {auc}");

    let history = fs::read_to_string(d.join("work/map.history.csv")).unwrap();
    assert!(history.starts_with("iter,primal_residual,data_fit,dual_residual\n"));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("work/map.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "detect");
    assert_eq!(manifest["seeds"]["prior"], 0);
    let inputs = manifest["inputs"].as_array().unwrap();
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert!(inputs.iter().any(|i| i["path"].as_str().unwrap().ends_with("bg.latent.raw")));
    assert!(manifest["history"].as_str().unwrap().ends_with("map.history.csv"));

    ok(sap(&["render", "--scores", "work/map", "--out", "work/map.pgm"], d));
    let pgm = fs::read(d.join("work/map.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);

    assert_eq!(fs::read(d.join("fx/scene.raw")).unwrap(), scene_before, "an input was modified");
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(sap(&["fixture", "--out", "fx"], d));
    let cfg = r#"{"solver": {"max_iter": 4}, "prior": {"stride": 16}}"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    ok(sap(&["--config", "cfg.json", "detect", "--input", "fx/scene", "--prior", "fallback:7", "--out", "a/map"], d));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("a/map.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["solver"]["max_iter"], 4);
    let seed = manifest["seeds"]["prior"].as_u64().unwrap();
    let prior = format!("fallback:{seed}");
    ok(sap(&["--config", "a/map.manifest.json", "detect", "--input", "fx/scene", "--prior", &prior, "--out", "b/map"], d));
    assert_eq!(fs::read(d.join("a/map.raw")).unwrap(), fs::read(d.join("b/map.raw")).unwrap());
    assert_eq!(
        fs::read(d.join("a/map.history.csv")).unwrap(),
        fs::read(d.join("b/map.history.csv")).unwrap()
    );
}

#[test]
fn explicit_flags_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(sap(&["fixture", "--out", "fx"], d));
    fs::write(d.join("cfg.json"), r#"{"solver": {"max_iter": 9}}"#).unwrap();
    ok(sap(&["--config", "cfg.json", "detect", "--input", "fx/scene", "--max-iter", "2", "--out", "map"], d));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("map.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["solver"]["max_iter"], 2);
    let rows = fs::read_to_string(d.join("map.history.csv")).unwrap().lines().count();
    assert_eq!(rows, 3);
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = sap(&["detect", "--no-such-flag"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("Usage:"), "{}", stderr(&out));
}

#[test]
fn errors_are_one_categorized_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sap(&["eval", "--scores", "missing", "--truth", "missing2", "--report", "r.csv"], d);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[missing_file]: "), "{err}");

    ok(sap(&["fixture", "--out", "fx"], d));
    let out = sap(&["detect", "--input", "fx/scene", "--prior", "resnet:1", "--out", "m"], d);
    assert!(stderr(&out).starts_with("error[invalid_argument]: "), "{}", stderr(&out));

    let out = sap(&["eval", "--scores", "fx/scene", "--truth", "fx/truth", "--report", "r.csv"], d);
    assert!(stderr(&out).starts_with("error[shape]: "), "{}", stderr(&out));

    fs::write(d.join("bad.json"), "{").unwrap();
    let out = sap(&["--config", "bad.json", "fixture", "--out", "fx2"], d);
    assert!(stderr(&out).starts_with("error[config]: "), "{}", stderr(&out));
}

#[test]
fn outputs_may_not_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(sap(&["fixture", "--out", "fx"], d));
    let before = fs::read(d.join("fx/scene.raw")).unwrap();
    let out = sap(&["detect", "--input", "fx/scene", "--out", "fx/scene", "--max-iter", "1"], d);
    assert!(stderr(&out).starts_with("error[invalid_argument]: "), "{}", stderr(&out));
    assert_eq!(fs::read(d.join("fx/scene.raw")).unwrap(), before);
}

#[test]
fn generate_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(sap(&["fixture", "--out", "fx"], d));
    ok(sap(&["generate", "--input", "fx/scene", "--out", "data", "--seed", "3"], d));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pairs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["config"]["seed"], 3);
    for f in manifest["files"].as_array().unwrap() {
        assert!(d.join("data").join(f["file"].as_str().unwrap()).exists());
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("data/run.manifest.json")).unwrap()).unwrap();
    assert_eq!(run["seeds"]["generate"], 3);
}
