use std::path::Path;
use std::process::{Command, Output};

fn encircle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encircle")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn presets_are_listed() {
    let out = encircle(&["presets"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["scenario1_constant", "scenario2_varying", "scenario3_occlusion", "experiment_scale"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = encircle(&["run", "--preset", "scenario1_constant", "--out", out_dir.to_str().unwrap(), "--duration", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    assert!(trace.starts_with("k,t,px_0,py_0,vx_0,vy_0,px_1,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 20);
    assert_eq!(summary["noise_on"], true);
}

#[test]
fn check_exit_codes_follow_the_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let run = encircle(&["run", "--preset", "scenario2_varying", "--out", out_dir.to_str().unwrap(), "--seed", "3"]);
    assert!(run.status.success());
    let summary = out_dir.join("summary.json");

    let bound = dir.path().join("bound.criteria");
    write(&bound, "bound_valid bound.valid == 1\nultimate_bound steady.max_e_inf <= bound.bound\n");
    let ok = encircle(&["check", "--summary", summary.to_str().unwrap(), "--criteria", bound.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let strict = dir.path().join("strict.criteria");
    write(&strict, "tight final_e_t < 1e-6\n");
    let fail = encircle(&["check", "--summary", summary.to_str().unwrap(), "--criteria", strict.to_str().unwrap()]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).starts_with("FAIL tight"));
}

#[test]
fn noise_free_tracking_check_reports_the_final_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("quiet");
    let run = encircle(&["run", "--preset", "scenario1_constant", "--out", out_dir.to_str().unwrap(), "--no-noise"]);
    assert!(run.status.success());
    let summary = out_dir.join("summary.json");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(doc["noise_on"], false);
    let final_e_t = doc["final_e_t"].as_f64().unwrap();

    let criteria = dir.path().join("tracking.criteria");
    write(&criteria, "final_tracking final_e_t < 1e-2\nfinal_flag final_e_t_below_1e-2 == 1\n");
    let check = encircle(&["check", "--summary", summary.to_str().unwrap(), "--criteria", criteria.to_str().unwrap()]);
    let expected = if final_e_t < 1e-2 { 0 } else { 1 };
    assert_eq!(check.status.code(), Some(expected), "{}", stdout(&check));
}

#[test]
fn bound_prints_a_report() {
    let out = encircle(&["bound", "--preset", "scenario2_varying", "--eta", "0.05"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let sigma = report["sigma_max"].as_f64().unwrap();
    assert!((sigma - 0.9932).abs() < 1e-3);
    let expected = (0.05 + 0.1 * 0.1) / (1.0 - sigma);
    assert!((report["bound"].as_f64().unwrap() - expected).abs() < 1e-9);
    assert_eq!(report["valid"], true);
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = encircle(&["run", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.cfg"));

    let unknown = encircle(&["bound", "--preset", "nonexistent"]);
    assert_eq!(unknown.status.code(), Some(2));

    let cfg = dir.path().join("bad_gain.cfg");
    write(&cfg, &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/scenario1_constant.cfg")).unwrap().replace("kv = 0.5", "kv = 40"));
    let out = encircle(&["bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("40"));

    let summary = dir.path().join("s.json");
    write(&summary, "{\"final_e_t\": 0.1}");
    let criteria = dir.path().join("c.criteria");
    write(&criteria, "broken line\n");
    let out = encircle(&["check", "--summary", summary.to_str().unwrap(), "--criteria", criteria.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn source_is_required() {
    let out = encircle(&["run", "--out", "/tmp/x"]);
    assert!(!out.status.success());
}
