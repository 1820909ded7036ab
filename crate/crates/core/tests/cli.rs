use std::fs;
use std::process::{Command, Output};

use fedsel::experiment::{read_metrics, METRICS_HEADER};

fn fedsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsel"))
        .args(args)
        .output()
        .unwrap()
}

const TINY: &[&str] = &[
    "--clients",
    "6",
    "--select",
    "2",
    "--rounds",
    "2",
    "--set",
    "samples_per_class=40",
    "--set",
    "samples_per_client=10,20",
    "--set",
    "aux_per_class=2",
    "--set",
    "epochs=1",
    "--set",
    "timing=false",
];

#[test]
fn dump_config_reflects_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    fs::write(&file, "# file settings\nalpha = 0.5\nrounds=7\nbeta=2\n").unwrap();
    let out = fedsel(&[
        "--config",
        file.to_str().unwrap(),
        "--set",
        "rounds=9",
        "--alpha",
        "0.3",
        "--dump-config",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "alpha=0.3"));
    assert!(text.lines().any(|l| l == "rounds=9"));
    assert!(text.lines().any(|l| l == "beta=2"));
    assert!(text.lines().any(|l| l == "probe=class_conditional"));
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(
        fedsel(&["--set", "nonsense=1", "--dump-config"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fedsel(&["--alpha", "-1", "--dump-config"]).status.code(),
        Some(2)
    );
    assert_eq!(
        fedsel(&["--select", "0", "--dump-config"]).status.code(),
        Some(2)
    );
    assert_eq!(fedsel(&["--preset", "everything"]).status.code(), Some(2));
    assert_eq!(
        fedsel(&["--config", "/nonexistent/run.cfg"]).status.code(),
        Some(2)
    );
}

#[test]
fn single_run_writes_metrics_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let est = dir.path().join("est.csv");
    let sel = dir.path().join("sel.csv");
    let mut args = TINY.to_vec();
    let (m, e, s) = (
        metrics.to_str().unwrap(),
        est.to_str().unwrap(),
        sel.to_str().unwrap(),
    );
    args.extend([
        "--seed",
        "2,3",
        "--out",
        m,
        "--estimator-log",
        e,
        "--selection-log",
        s,
    ]);
    let out = fedsel(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    let rows = read_metrics(&metrics).unwrap();
    // three warm-up rounds plus two selected rounds, per seed
    assert_eq!(rows.len(), 2 * 5);
    assert!(rows.iter().all(|r| r.wall_time_ms == 0.0));
    assert_eq!(rows[5].seed, 3);

    let est_text = fs::read_to_string(&est).unwrap();
    assert!(est_text
        .starts_with("round,client_id,true_kl,est_kl,reward,spearman_vs_truth,saturated_flag\n"));
    assert_eq!(est_text.lines().count(), 1 + 2 * 5 * 2);
    let sel_text = fs::read_to_string(&sel).unwrap();
    assert!(sel_text.starts_with("round,scheme,selected_ids,aggregated_kl,min_T,max_rhat\n"));
}

#[test]
fn preset_writes_one_file_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("cmp.csv");
    let mut args = TINY.to_vec();
    args.extend([
        "--preset",
        "scheme-comparison",
        "--out",
        base.to_str().unwrap(),
    ]);
    let out = fedsel(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for label in ["cucb", "greedy", "random", "iid"] {
        let path = dir.path().join(format!("cmp_{label}.csv"));
        let rows = read_metrics(&path).unwrap();
        assert!(!rows.is_empty(), "{label}");
    }
}
