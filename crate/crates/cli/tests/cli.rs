use std::path::Path;
use std::process::Command;

use sgmc_cli::{compare_command, run_command, CliError, Demo, ReferenceKind, RunConfig, RunSummary};

fn sgmc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgmc"))
}

fn small_gaussian(out: &Path) -> RunConfig {
    let mut c = Demo::Gaussian.config();
    c.params.iterations = Some(2_000);
    c.params.burn_in = Some(500);
    c.output = Some(out.to_path_buf());
    c
}

#[test]
fn smoke_run_writes_samples_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = sgmc()
        .args([
            "run",
            "--demo",
            "gaussian",
            "--iterations",
            "3000",
            "--burn-in",
            "1000",
            "--format",
            "csv",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("samples.csv").exists());
    let summary = RunSummary::read(&out).unwrap();
    assert_eq!(summary.schema_version, 1);
    assert_eq!(summary.sample_count, 2000);
    assert_eq!(summary.config.params.iterations, Some(3000));
    assert_eq!(summary.config_digest.len(), 64);
    assert!(summary.variable("theta").unwrap().ess > 1.0);
}

#[test]
fn zero_iterations_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgmc()
        .args(["run", "--demo", "gaussian", "--iterations", "0", "--output"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iterations"));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "gaussian_mean", "stepsize": 0.1}"#).unwrap();
    let out = sgmc().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepsize"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let out = dir.path().join("run");
    let mut c = small_gaussian(&out);
    c.params.burn_in = Some(1_999);
    std::fs::write(&cfg, c.canonical_json()).unwrap();
    let status = sgmc()
        .args(["run", "--burn-in", "1500", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(RunSummary::read(&out).unwrap().sample_count, 500);
}

#[test]
fn numeric_failure_exits_3_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = sgmc()
        .args([
            "run",
            "--demo",
            "gaussian",
            "--burn-in",
            "0",
            "--first-step-size",
            "5",
            "--last-step-size",
            "4",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let summary = RunSummary::read(&out).unwrap();
    assert!(summary.chains[0].error.as_deref().unwrap().contains("numeric"));
    assert!(out.join("samples.jsonl").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let out = dir.path().join(name);
        let mut c = small_gaussian(&out);
        c.chains = Some(3);
        run_command(&c).unwrap();
        (0..3)
            .map(|i| std::fs::read(out.join(format!("samples_chain{i}.jsonl"))).unwrap())
            .collect::<Vec<_>>()
    };
    let (a, b) = (read("a"), read("b"));
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}

#[test]
fn compare_with_itself_has_zero_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_command(&small_gaussian(&out)).unwrap();
    let report = compare_command(&out, &ReferenceKind::Run(out.clone())).unwrap();
    let theta = report.variable("theta").unwrap();
    assert_eq!(theta.mean_discrepancy, 0.0);
    assert_eq!(theta.std_ratio, 1.0);
    assert!(out.join("compare_report.json").exists());

    let status = sgmc()
        .args(["compare", "--reference", "analytic", "--run"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn compare_rejects_mismatched_variables() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_command(&small_gaussian(&a)).unwrap();
    let mut c = Demo::Regression.config();
    c.params.iterations = Some(3_000);
    c.params.selections = Some(100);
    c.output = Some(b.clone());
    run_command(&c).unwrap();
    let err = compare_command(&a, &ReferenceKind::Run(b.clone())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let status = sgmc()
        .args(["compare", "--reference", "run", "--run"])
        .arg(&a)
        .arg("--reference-dir")
        .arg(&b)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn analytic_reference_needs_a_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut c = Demo::Mixture.config();
    c.params.iterations = Some(2_000);
    c.output = Some(out.clone());
    run_command(&c).unwrap();
    assert!(matches!(
        compare_command(&out, &ReferenceKind::Analytic),
        Err(CliError::Config { field, .. }) if field == "reference"
    ));
}
