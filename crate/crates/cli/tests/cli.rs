use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medrobust"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/smoke").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let m = fixture("ct_demo.json");
    assert_eq!(run(&["calibrate", "--manifest", p(&m), "--levels", "7"]).status.code(), Some(1));
    assert_eq!(run(&["calibrate", "--manifest", p(&m), "--levels", "3-1"]).status.code(), Some(1));
}

#[test]
fn validate_manifest_accepts_fixtures() {
    let out = run(&["validate-manifest", "--manifest", p(&fixture("ct_demo.json")), "--manifest", p(&fixture("derm_demo.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_manifest_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["validate-manifest", "--manifest", p(&missing)]).status.code(), Some(1));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(run(&["validate-manifest", "--manifest", p(&broken)]).status.code(), Some(1));

    let dangling = dir.path().join("dangling.json");
    std::fs::write(
        &dangling,
        r#"{"dataset_id":"x","modality":"CT","samples":[{"sample_id":"a","image_path":"missing.png"}]}"#,
    )
    .unwrap();
    let out = run(&["validate-manifest", "--manifest", p(&dangling)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn perturbation_filter_is_checked_against_modality() {
    let m = fixture("derm_demo.json");
    let out = run(&["validate-manifest", "--manifest", p(&m), "--perturbations", "ct_beam_hardening"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["validate-manifest", "--manifest", p(&m), "--perturbations", "not_a_perturbation"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn calibrate_warm_rerun_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let m = fixture("ct_demo.json");
    let args = ["calibrate", "--manifest", p(&m), "--cache", p(&cache), "--levels", "1,2", "--perturbations", "gaussian_noise,ct_metal_streak"];
    let first = run(&args);
    assert!(first.status.success());
    assert!(String::from_utf8_lossy(&first.stdout).starts_with("12 entries: 12 computed, 0 reused"));
    let bytes = std::fs::read(&cache).unwrap();

    let second = run(&args);
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stdout).starts_with("12 entries: 0 computed, 12 reused"));
    assert_eq!(std::fs::read(&cache).unwrap(), bytes);
}

#[test]
fn corrupt_cache_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    std::fs::write(&cache, "garbage").unwrap();
    let out = run(&["calibrate", "--manifest", p(&fixture("ct_demo.json")), "--cache", p(&cache), "--levels", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_from_metric_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    let mut lines = String::new();
    for (ds, clean, drop) in [("a", 0.9, 0.02), ("b", 0.8, 0.04)] {
        let rec = |pid: &str, cat: &str, level: u8, value: f64| {
            format!(
                r#"{{"model":"M","strategy":"S","dataset":"{ds}","task":"segmentation","perturbation_id":"{pid}","category":"{cat}","level":{level},"value":{value},"metric_name":"iou"}}"#
            )
        };
        lines += &rec("clean", "clean", 0, clean);
        lines.push('\n');
        lines += &rec("gaussian_blur", "base", 2, clean - drop);
        lines.push('\n');
        lines += &rec("ct_metal_streak", "med_specific", 2, clean - 2.0 * drop);
        lines.push('\n');
    }
    std::fs::write(&records, lines).unwrap();
    let out_dir = dir.path().join("report");
    let out = run(&["report", "--records", p(&records), "--out", p(&out_dir), "--top-k", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("table1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,strategy,task,metric,avg_delta_b,a_clean,a_delta_b,a_delta_m,b_clean,b_delta_b,b_delta_m"
    );
    assert_eq!(lines.next().unwrap(), "M,S,segmentation,iou,0.030,0.900,0.020,0.040,0.800,0.040,0.080");
    assert!(out_dir.join("report.json").is_file());
    assert!(out_dir.join("delta_grid.csv").is_file());
}

#[test]
fn report_missing_records_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = run(&["report", "--records", p(&missing), "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}
