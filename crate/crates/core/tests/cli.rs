use std::path::Path;
use std::process::{Command, Output};

fn localeb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localeb"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn evaluate_without_store_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = localeb(dir.path(), &["evaluate", "--out", "nowhere"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("simulate"), "{err}");
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(localeb(dir.path(), &["evaluate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        localeb(dir.path(), &["simulate", "--synthetic", "--folds", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn invalid_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "experiment_id,metric_id,time_days,arm,count_cum,mean_cum,variance_cum\n\
         e,m,1,c,100,1,1\ne,m,1,t,100,1,1\ne,m,2,c,90,1,1\ne,m,2,t,120,1,1\n",
    )
    .unwrap();
    let out = localeb(dir.path(), &["ingest", "--dataset", "bad.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn theory_check_two_type_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = localeb(
        dir.path(),
        &["theory-check", "--preset", "two-type-exact", "--draws", "100000", "--out", "t"],
    );
    assert!(out.status.success());
    let report = json(&dir.path().join("t/dominance_report.json"));
    let gap = report["gap"].as_f64().unwrap();
    let mcse = report["gap_mcse"].as_f64().unwrap();
    assert!((gap - 1.0).abs() <= 3.0 * mcse + 1e-12, "{gap}");
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert!(dir.path().join("t/manifest-theory-check.json").exists());
}

#[test]
fn help_lists_flag_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = localeb(dir.path(), &["reproduce", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    for needle in ["--folds", "[default: 5]", "--replicates", "[default: 1000]", "--m0", "[default: 30]", "--rho", "[default: 0.75]"] {
        assert!(help.contains(needle), "missing {needle}");
    }
}

/// Re-running from the configuration recorded in a manifest reproduces the
/// same scores.
#[test]
fn manifest_config_reproduces_scores() {
    let dir = tempfile::tempdir().unwrap();
    let first = localeb(
        dir.path(),
        &["reproduce", "--synthetic", "--replicates", "6", "--q-grid", "10", "--ci-resamples", "100", "--out", "a"],
    );
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = localeb(dir.path(), &["reproduce", "--config", "a/manifest-reproduce.json", "--out", "b"]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    for file in ["scores.csv", "scores.json", "figure1_data.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn staged_commands_match_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--replicates", "5", "--q-grid", "8"];
    let run = |args: &[&str]| {
        let out = localeb(dir.path(), args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["generate", "--out", "data"]);
    let mut simulate = vec!["simulate", "--dataset", "data/corpus.csv", "--out", "staged"];
    simulate.extend(common);
    run(&simulate);
    run(&["evaluate", "--out", "staged", "--ci-resamples", "100"]);
    let mut reproduce = vec!["reproduce", "--dataset", "data/corpus.csv", "--out", "whole", "--ci-resamples", "100"];
    reproduce.extend(common);
    run(&reproduce);
    let a = std::fs::read(dir.path().join("staged/scores.csv")).unwrap();
    let b = std::fs::read(dir.path().join("whole/scores.csv")).unwrap();
    assert!(a == b);
}
