use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn codetext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codetext"))
        .current_dir(root())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn evaluate_reproduces_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = codetext(&["evaluate", "--config", "data/golden/config.toml", "--output-dir", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = fs::read(dir.path().join("report.json")).unwrap();
    let want = fs::read(root().join("data/golden/report.json")).unwrap();
    assert!(got == want, "report differs from golden:\n{}", String::from_utf8_lossy(&got));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = codetext(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = codetext(&["evaluate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = codetext(&["gradcheck", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    let arrays = report["arrays"].as_array().unwrap();
    assert!(!arrays.is_empty());
    for a in arrays {
        assert!(a["max_relative_error"].as_f64().unwrap() < 1e-4, "{a}");
    }
}

#[test]
fn domain_errors_exit_one_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = codetext(&["pretrain", "--output-dir", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error code=IO_FAILURE"), "{}", stderr(&o));

    let o = codetext(&["evaluate", "--output-dir", out, "--set", "evaluate.tsk=generation"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error code=INVALID_CONFIG"), "{}", stderr(&o));
}

#[test]
fn identical_runs_give_identical_manifests_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = || {
        let o = codetext(&["build-corpus", "--output-dir", out, "--set", "corpus.combination=\"1-CC\""]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
        (read("corpus.jsonl"), read("run-manifest-build-corpus.json"))
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let manifest: serde_json::Value = serde_json::from_str(&first.1).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["artifacts"]["corpus"]["sha256"].is_string());
}

#[test]
fn logs_are_key_value_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = codetext(&["evaluate", "--config", "data/golden/config.toml", "--output-dir", dir.path().to_str().unwrap()]);
    let log = stderr(&o);
    assert!(!log.is_empty());
    for line in log.lines() {
        assert!(line.starts_with("level="), "{line}");
        let first = line.split_whitespace().next().unwrap();
        assert!(first.contains('='), "{line}");
    }
    assert!(log.contains("metric=exact_match value=20.00"), "{log}");
}
