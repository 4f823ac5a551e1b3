//! End-to-end tests of the `fedcso` binary: flags, exit codes, file
//! contracts, reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn fedcso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcso"))
        .args(args)
        .output()
        .expect("failed to launch fedcso")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_writes_one_row_per_step_at_q1() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("t.csv");
    let out = fedcso(&[
        "run",
        "--algo", "fcsg",
        "--task", "quadratic",
        "--workers", "1",
        "--steps", "10",
        "--local-steps", "1",
        "--lr", "0.1",
        "--outer-batch", "1",
        "--inner-batch", "5",
        "--seed", "7",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11, "header + 10 rows");
    assert!(lines[0].starts_with("t,round,grad_norm_sq"));
    assert!(Path::new(&format!("{}.meta.json", out_path.display())).exists());
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = fedcso(&[
            "run",
            "--algo", "fcsg-m",
            "--task", "invlogreg",
            "--workers", "2",
            "--steps", "20",
            "--local-steps", "5",
            "--lr", "0.01",
            "--momentum", "0.5",
            "--inner-batch", "3",
            "--seed", "11",
            "--eval-size", "500",
            "--out", path.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn momentum_with_fcsg_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("t.csv");
    let out = fedcso(&[
        "run",
        "--algo", "fcsg",
        "--task", "quadratic",
        "--steps", "5",
        "--lr", "0.1",
        "--momentum", "0.5",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(!out_path.exists());
}

#[test]
fn missing_required_flags_are_usage_errors() {
    let out = fedcso(&["run", "--algo", "fcsg", "--task", "quadratic", "--lr", "0.1"]);
    assert_exit(&out, 2); // no --steps / --out
    let out = fedcso(&["run", "--algo", "nope", "--task", "quadratic"]);
    assert_exit(&out, 2);
}

#[test]
fn config_file_merges_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    std::fs::write(
        &cfg,
        r#"{"algo":"fcsg","task":"quadratic","steps":6,"lr":0.1,"inner_batch":4,"seed":3}"#,
    )
    .unwrap();
    let out = fedcso(&[
        "run",
        "--config", cfg.to_str().unwrap(),
        "--out", out_a.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    // Overriding the seed changes the trace.
    let out = fedcso(&[
        "run",
        "--config", cfg.to_str().unwrap(),
        "--seed", "4",
        "--out", out_b.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_ne!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());

    // Unknown keys are rejected.
    std::fs::write(&cfg, r#"{"algo":"fcsg","bogus":1}"#).unwrap();
    let out = fedcso(&[
        "run",
        "--config", cfg.to_str().unwrap(),
        "--out", out_a.to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
}

#[test]
fn trace_is_reproducible_from_its_sidecar_alone() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let out = fedcso(&[
        "run",
        "--algo", "acc-fcsg-m",
        "--task", "maml-toy",
        "--workers", "2",
        "--steps", "15",
        "--local-steps", "3",
        "--lr", "0.05",
        "--momentum", "0.3",
        "--inner-batch", "2",
        "--seed", "21",
        "--out", first.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    let meta = format!("{}.meta.json", first.display());
    let second = dir.path().join("second.csv");
    let out = fedcso(&[
        "run",
        "--config", &meta,
        "--out", second.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn auto_hyper_echoes_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("t.csv");
    let out = fedcso(&[
        "run",
        "--algo", "acc-fcsg-m",
        "--task", "quadratic",
        "--workers", "2",
        "--steps", "64",
        "--auto-hyper",
        "--s-f", "1.0",
        "--inner-batch", "2",
        "--seed", "5",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("auto-hyper:"), "stdout: {stdout}");
    assert!(stdout.contains("beta="));
    assert!(stdout.contains("B="));
}

#[test]
fn bias_check_degenerate_noise_passes_with_zero_bias() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bias.csv");
    let out = fedcso(&[
        "bias-check",
        "--task", "quadratic",
        "--m-list", "2,4",
        "--trials", "50",
        "--sigma1", "0",
        "--sigma2", "0",
        "--seed", "1",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,bias_sq"));
    for line in lines {
        let bias: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(bias, 0.0, "degenerate draws must have exactly zero bias");
    }
}

#[test]
fn bias_check_single_entry_trivially_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bias.csv");
    let out = fedcso(&[
        "bias-check",
        "--m-list", "1",
        "--trials", "100",
        "--seed", "1",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
}

#[test]
fn bias_check_rejects_non_oracle_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bias.csv");
    let out = fedcso(&[
        "bias-check",
        "--task", "invlogreg",
        "--m-list", "2,4",
        "--trials", "10",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn sweep_emits_cell_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedcso(&[
        "sweep",
        "--task", "invlogreg",
        "--algo-list", "fcsg,fcsg-m",
        "--m-list", "1,2,3",
        "--noise-ratio-list", "1,2",
        "--seed-list", "1",
        "--workers", "2",
        "--steps", "8",
        "--local-steps", "4",
        "--lr", "0.01",
        "--momentum", "0.5",
        "--eval-size", "200",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    // 2 algos x 3 m x 2 ratios x 1 seed = 12 traces + summary.
    let entries: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let csvs = entries
        .iter()
        .filter(|n| n.ends_with(".csv") && *n != "summary.csv")
        .count();
    assert_eq!(csvs, 12, "entries: {entries:?}");
    assert!(entries.contains(&"fcsg_m2_r2_s1.csv".to_string()));
    assert!(entries.contains(&"fcsg-m_m3_r1_s1.csv".to_string()));

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "algo,m,noise_ratio,seed,final_test_metric,final_grad_norm_sq"
    );
    assert_eq!(lines.len(), 13);

    // Resume: a second invocation skips every completed cell.
    let out = fedcso(&[
        "sweep",
        "--task", "invlogreg",
        "--algo-list", "fcsg,fcsg-m",
        "--m-list", "1,2,3",
        "--noise-ratio-list", "1,2",
        "--seed-list", "1",
        "--workers", "2",
        "--steps", "8",
        "--local-steps", "4",
        "--lr", "0.01",
        "--momentum", "0.5",
        "--eval-size", "200",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("skip ").count(), 12, "stdout: {stdout}");
}

#[test]
fn sweep_empty_list_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedcso(&[
        "sweep",
        "--m-list", "",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}
