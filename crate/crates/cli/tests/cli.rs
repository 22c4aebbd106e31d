use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn twoscale(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn validate_only_on_ou_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twoscale(&["run"], &config("ou_validate.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("validation.csv").exists());
    let s = summary(tmp.path());
    assert_eq!(s["pass"], true);
    assert_eq!(s["stages"], serde_json::json!(["validate"]));
}

#[test]
fn unknown_family_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("ou_validate.toml")).unwrap().replace("name = \"ou\"", "name = \"foo\"");
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = twoscale(&["run"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("foo"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("ou_validate.toml")).unwrap().replace("budget = 4000", "budget = 4000\nbudgte = 1");
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = twoscale(&["validate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budgte"));
}

#[test]
fn hj_without_table_reports_missing_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twoscale(&["hj"], &config("bump_1d.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing prerequisite") && err.contains("effham"), "{err}");
}

#[test]
fn stages_resume_from_stored_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("constant_1d.toml");
    let o = twoscale(&["effham"], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = twoscale(&["hj"], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(tmp.path());
    assert_eq!(s["verdicts"][0]["name"], "hopf_lax_sup_error");
    assert_eq!(s["verdicts"][0]["status"], "pass");
}

#[test]
fn full_bump_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let o = twoscale(&["run"], &config("bump_1d.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "validation.csv",
        "cell.csv",
        "cell_0.csv",
        "measure.csv",
        "effham_table.csv",
        "hj_solution.csv",
        "lagrangian.csv",
        "rate.csv",
        "rate_path_0.csv",
        "mc.csv",
        "pde2d_0.csv",
        "convergence.csv",
    ] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let s = summary(tmp.path());
    let verdicts = s["verdicts"].as_array().unwrap();
    assert!(verdicts.len() >= 10);
    for v in verdicts {
        assert!(v["measured"].is_number() && v["threshold"].is_number(), "{v}");
    }
}
