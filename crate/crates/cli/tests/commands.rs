use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const ACCEPTANCE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/acceptance.json");

fn dat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dat"))
        .args(args)
        .env_remove("DAT_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario_with(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(ACCEPTANCE).unwrap()).unwrap();
    v["t_end"] = 1.0.into();
    v["lipschitz"] = serde_json::json!({"samples": 2000, "radius": 10.0});
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_accepts_shipped_scenario() {
    let o = dat(&["validate", ACCEPTANCE]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "OK");
}

#[test]
fn validate_names_violated_assumptions() {
    let tmp = tempfile::tempdir().unwrap();
    let split = scenario_with(tmp.path(), "split.json", |v| {
        v["graph"]["edges"] = serde_json::json!([[0, 1], [2, 3]]);
    });
    let o = dat(&["validate", split.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Assumption 1 violated: graph not connected"));

    let lying = scenario_with(tmp.path(), "lying.json", |v| {
        v["field"] = serde_json::json!({"kind": "sine", "gamma": 0.4, "scale": 0.5});
    });
    let o = dat(&["validate", lying.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Assumption 3 spot-check failed"));

    let unbounded = scenario_with(tmp.path(), "nobound.json", |v| {
        v.as_object_mut().unwrap().remove("reference_bound");
    });
    let o = dat(&["validate", unbounded.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("reference_bound"));
}

#[test]
fn validate_reports_parse_position() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    fs::write(&path, "{\n  \"schema_version\": 1,\n  \"graph\": ]\n}").unwrap();
    let o = dat(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = dat(&[
        "validate",
        tmp.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_writes_outputs_with_clean_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = dat(&["run", ACCEPTANCE, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "trajectory.csv",
        "trajectory.json",
        "report.json",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = json(&out.join("report.json"));
    assert_eq!(report["violations"], serde_json::json!([]));
    let manifest = json(&out.join("manifest.json"));
    let bytes = fs::read(ACCEPTANCE).unwrap();
    assert_eq!(manifest["scenario_sha256"], dat_cli::sha256_hex(&bytes));
    assert_eq!(manifest["digest"], dat_cli::digest(&bytes, &[]));
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn run_is_deterministic_and_records_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_with(tmp.path(), "short.json", |_| {});
    let run = |dir: &str, extra: &[&str]| {
        let out = tmp.path().join(dir);
        let mut args = vec!["run", path.to_str().unwrap(), "-o", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = dat(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--set", "dt=0.01"]);
    assert_eq!(
        fs::read(a.join("trajectory.csv")).unwrap(),
        fs::read(b.join("trajectory.csv")).unwrap()
    );
    let ma = json(&a.join("manifest.json"));
    let mb = json(&b.join("manifest.json"));
    let mc = json(&c.join("manifest.json"));
    assert_eq!(ma["digest"], mb["digest"]);
    assert_ne!(ma["digest"], mc["digest"]);
    assert_eq!(ma["scenario_sha256"], mc["scenario_sha256"]);
    assert_eq!(mc["overrides"], serde_json::json!(["dt=0.01"]));
}

#[test]
fn run_rejects_bad_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = dat(&[
        "run",
        ACCEPTANCE,
        "-o",
        out.to_str().unwrap(),
        "--set",
        "gains.gamma=1",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("valid keys"));
    let o = dat(&[
        "run",
        ACCEPTANCE,
        "-o",
        out.to_str().unwrap(),
        "--set",
        "variant.epsilon=0.1",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_fails_before_simulating() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("sub");
    let o = dat(&["run", ACCEPTANCE, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("not writable"));
}

#[test]
fn non_finite_state_aborts_with_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_with(tmp.path(), "stiff.json", |v| {
        v["graph"] = serde_json::json!({"n": 2, "edges": [[0, 1]]});
        v["matrices"] = serde_json::json!({"a": [[50.0]], "b": [[1.0]]});
        v["field"] = serde_json::json!({"kind": "zero", "gamma": 0.0});
        v["variants"] = serde_json::json!([]);
        v["dt"] = 1.0.into();
        v["t_end"] = 400.0.into();
        v["monitor_stride"] = 1.into();
    });
    let out = tmp.path().join("o");
    let o = dat(&["run", path.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("# ABORTED"));
    assert_eq!(json(&out.join("manifest.json"))["status"], "aborted");
    assert!(!json(&out.join("trajectory.json"))["aborted"].is_null());
}

#[test]
fn compare_requires_two_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_with(tmp.path(), "one.json", |v| {
        v["variants"] = serde_json::json!([{"variant": "robust"}]);
    });
    let o = dat(&[
        "compare",
        path.to_str().unwrap(),
        "-o",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn compare_duplicate_variant_gives_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_with(tmp.path(), "twice.json", |v| {
        let c = serde_json::json!({"variant": "continuous", "epsilon": 0.5, "c": 1.0});
        v["variants"] = serde_json::json!([c.clone(), c]);
    });
    let out = tmp.path().join("o");
    let o = dat(&[
        "compare",
        path.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = json(&out.join("compare.json"));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for k in [
        "final_tracking_error",
        "final_consensus_error",
        "total_variation",
    ] {
        assert_eq!(rows[0][k], rows[1][k], "{k}");
    }
    assert_eq!(rows[1]["tv_ratio"], 1.0);
    assert!(out.join("compare.csv").is_file());
}

#[test]
fn sweep_writes_one_manifest_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_with(tmp.path(), "cont.json", |v| {
        v["variant"] = serde_json::json!({"variant": "continuous", "epsilon": 0.5, "c": 1.0});
    });
    let out = tmp.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_dat"))
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--param",
            "variant.epsilon",
        ])
        .args(["--values", "1,0.1,0.01", "-o", out.to_str().unwrap()])
        .env("DAT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut digests = Vec::new();
    for v in ["1", "0.1", "0.01"] {
        let m = json(
            &out.join(format!("variant.epsilon={v}"))
                .join("manifest.json"),
        );
        assert_eq!(
            m["overrides"],
            serde_json::json!([format!("variant.epsilon={v}")])
        );
        digests.push(m["digest"].as_str().unwrap().to_string());
    }
    digests.dedup();
    assert_eq!(digests.len(), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn sweep_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = dat(&[
        "sweep",
        ACCEPTANCE,
        "--param",
        "nope",
        "--values",
        "1",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("valid keys: dt"));
    let o = dat(&[
        "sweep",
        ACCEPTANCE,
        "--param",
        "dt",
        "--values",
        "",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_dat"))
        .args([
            "sweep",
            ACCEPTANCE,
            "--param",
            "dt",
            "--values",
            "0.01",
            "-o",
            out.to_str().unwrap(),
        ])
        .env("DAT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_three() {
    assert_eq!(code(&dat(&["frobnicate"])), 3);
    assert_eq!(code(&dat(&["run", ACCEPTANCE])), 3);
    assert_eq!(code(&dat(&["--help"])), 0);
}

#[test]
fn digest_depends_on_bytes_and_overrides() {
    let base = dat_cli::digest(b"{}", &[]);
    assert_eq!(base, dat_cli::digest(b"{}", &[]));
    assert_ne!(base, dat_cli::digest(b"{ }", &[]));
    assert_ne!(base, dat_cli::digest(b"{}", &["dt=0.1".into()]));
    assert_ne!(
        dat_cli::digest(b"{}", &["a=1".into(), "b=2".into()]),
        dat_cli::digest(b"{}", &["a=1b=2".into()])
    );
}
