use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn amdkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amdkit")).args(args).output().expect("binary runs")
}

fn config(method: &str, n_events: usize) -> String {
    format!(
        r#"seed = 21

[surface]
kind = "double_well"

[dynamics]
beta = 4.0
dt = 1e-3

[states]
kind = "explicit"
regions = [{{ shape = "interval", lo = -1.45, hi = 0.0 }}]

[method]
{method}

[run]
start = [-1.0]
n_events = {n_events}
"#
    )
}

const PARREP: &str = r#"kind = "parrep"
n_replicas = 8
tau_corr = { kind = "fixed", time = 0.5 }
dephasing = { kind = "rejection", max_attempts = 10000 }"#;

fn run(dir: &Path, name: &str, text: &str, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, text).unwrap();
    let out = dir.join(name);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (amdkit(&args), out)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_events() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config(PARREP, 150);
    let (a, da) = run(tmp.path(), "a", &text, &["--workers", "1"]);
    let (b, db) = run(tmp.path(), "b", &text, &["--workers", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(fs::read(da.join("events.csv")).unwrap(), fs::read(db.join("events.csv")).unwrap());
    for f in ["config.toml", "events.csv", "trajectory.csv", "summary.json", "manifest.json"] {
        assert!(da.join(f).is_file(), "{f}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(da.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 21);
}

#[test]
fn direct_and_parrep_summaries_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, da) = run(tmp.path(), "direct", &config(r#"kind = "direct""#, 600), &[]);
    let (b, db) = run(tmp.path(), "parrep", &config(PARREP, 600), &[]);
    assert!(a.status.success() && b.status.success());
    let (sa, sb) = (summary(&da), summary(&db));
    let diff = sa["mean_time"].as_f64().unwrap() - sb["mean_time"].as_f64().unwrap();
    let se = sa["std_error"].as_f64().unwrap().hypot(sb["std_error"].as_f64().unwrap());
    assert!(diff.abs() < 3.0 * se, "{diff} vs {se}");

    let cmp = amdkit(&["compare", da.to_str().unwrap(), db.to_str().unwrap()]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stdout));
    let same = amdkit(&["compare", da.to_str().unwrap(), da.to_str().unwrap()]);
    assert!(same.status.success());
    let report: Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn unscaled_clock_fails_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, da) = run(tmp.path(), "direct", &config(r#"kind = "direct""#, 400), &[]);
    let broken = format!("{PARREP}\nclock_rule = \"unscaled\"");
    let (b, db) = run(tmp.path(), "broken", &config(&broken, 400), &[]);
    assert!(a.status.success() && b.status.success());
    let cmp = amdkit(&["compare", da.to_str().unwrap(), db.to_str().unwrap()]);
    assert_eq!(cmp.status.code(), Some(1));
}

#[test]
fn malformed_config_leaves_nothing_behind() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("syntax", "seed = [".to_string()),
        ("unknown", config(r#"kind = "direct""#, 10).replace("dt = 1e-3", "dt = 1e-3\ntypo = 2")),
        ("semantic", config(r#"kind = "direct""#, 0)),
    ] {
        let (o, out) = run(tmp.path(), name, &text, &[]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(!out.exists(), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}

#[test]
fn compare_rejects_mismatched_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, da) = run(tmp.path(), "a", &config(r#"kind = "direct""#, 20), &[]);
    let other = tmp.path().join("other");
    fs::create_dir_all(&other).unwrap();
    fs::write(other.join("events.csv"), "a,b\n1,2\n").unwrap();
    let cmp = amdkit(&["compare", da.to_str().unwrap(), other.to_str().unwrap()]);
    assert_eq!(cmp.status.code(), Some(2));
}
