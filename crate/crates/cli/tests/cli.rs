//! End-to-end tests of the `sclo` binary: every verb runs against real
//! files in a temporary directory, and exit codes follow the contract
//! (0 ok, 2 config error, 3 numerical divergence, 4 I/O error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sclo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sclo"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    sclo()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY: &[&str] = &[
    "--set",
    "physics.resolution=16",
    "--set",
    "physics.T_phy=0.2",
    "--set",
    "physics.warmup=0.05",
    "--set",
    "physics.trajectories=2",
    "--set",
    "physics.train_trajectories=1",
    "--set",
    "conditioning.sparse_n=4",
    "--set",
    "network.profile=tiny",
    "--set",
    "training.epochs=20",
    "--set",
    "training.batch=10",
    "--set",
    "diffusion.tau_floor=0.05",
    "--set",
    "run.seed=5",
];

fn generate_tiny(dir: &Path, name: &str) -> PathBuf {
    let mut args = vec!["generate"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--output", name]);
    let out = run_in(dir, &args);
    assert_ok(&out);
    dir.join(name)
}

fn train_tiny(dir: &Path, dataset: &str, name: &str) -> PathBuf {
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--dataset", dataset, "--output", name]);
    let out = run_in(dir, &args);
    assert_ok(&out);
    dir.join(name)
}

#[test]
fn generate_is_deterministic_and_counts_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_tiny(dir.path(), "a.sclo");
    let b = generate_tiny(dir.path(), "b.sclo");

    let mut args = vec!["generate"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--output", "a.sclo"]);
    let out = run_in(dir.path(), &args);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("wrote 40 snapshots (20 train, 20 test)"), "{text}");
    assert!(text.contains("content hash"), "{text}");

    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed must produce identical payloads"
    );
}

#[test]
fn config_file_and_overrides_cooperate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "[physics]\nresolution = 16\nT_phy = 0.1\nwarmup = 0.02\n\
         trajectories = 1\ntrain_trajectories = 1\n\
         [conditioning]\nsparse_n = 4\n[run]\nseed = 3\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "generate",
            "--config",
            "run.cfg",
            "--set",
            "physics.T_phy=0.05",
            "--output",
            "c.sclo",
        ],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("wrote 5 snapshots"), "{}", stdout(&out));
}

#[test]
fn bad_inputs_use_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["generate", "--set", "physics.bogus=1", "--output", "x.sclo"],
    );
    assert_eq!(out.status.code(), Some(2), "unknown key is a config error");

    let out = run_in(
        dir.path(),
        &["train", "--dataset", "missing.sclo", "--output", "x.sclk"],
    );
    assert_eq!(out.status.code(), Some(4), "missing file is an I/O error");

    let out = run_in(dir.path(), &["simulate", "--settings", "II"]);
    assert_eq!(out.status.code(), Some(2), "model settings need a checkpoint");
}

#[test]
fn train_reduces_held_out_loss_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate_tiny(dir.path(), "d.sclo");

    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--dataset", "d.sclo", "--output", "m1.sclk"]);
    let out = run_in(dir.path(), &args);
    assert_ok(&out);
    let text = stdout(&out);

    let grab = |tag: &str| -> f64 {
        let line = text.lines().find(|l| l.contains(tag)).expect(tag);
        line.split(':').next_back().unwrap().trim().parse().unwrap()
    };
    let before = grab("loss before");
    let after = grab("loss after");
    assert!(
        after < before,
        "training must reduce the held-out loss ({before} -> {after})"
    );
    assert!(dir.path().join("m1.loss.csv").exists());

    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--dataset", "d.sclo", "--output", "m2.sclk"]);
    assert_ok(&run_in(dir.path(), &args));
    assert_eq!(
        std::fs::read(dir.path().join("m1.sclk")).unwrap(),
        std::fs::read(dir.path().join("m2.sclk")).unwrap(),
        "same seed must train to identical weights"
    );
}

#[test]
fn sample_scores_models_baseline_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    generate_tiny(dir.path(), "d.sclo");
    train_tiny(dir.path(), "d.sclo", "m.sclk");

    let mut args = vec!["sample"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&[
        "--dataset",
        "d.sclo",
        "--checkpoint",
        "m.sclk",
        "--baseline",
        "--truth-as-prediction",
        "--limit",
        "3",
        "--output-dir",
        "out",
    ]);
    let out = run_in(dir.path(), &args);
    assert_ok(&out);

    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{summary}");
    let truth_row = rows.iter().find(|r| r.starts_with("truth,")).unwrap();
    let cells: Vec<&str> = truth_row.split(',').collect();
    for cell in &cells[3..7] {
        assert_eq!(*cell, "0", "truth-as-prediction must score zero: {summary}");
    }
    assert!(dir.path().join("out/m_metrics.csv").exists());
    assert!(dir.path().join("out/bicubic-baseline_metrics.csv").exists());
}

#[test]
fn sample_evaluates_across_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    generate_tiny(dir.path(), "d16.sclo");
    train_tiny(dir.path(), "d16.sclo", "m.sclk");

    let out = run_in(
        dir.path(),
        &[
            "generate",
            "--set",
            "physics.resolution=32",
            "--set",
            "physics.T_phy=0.05",
            "--set",
            "physics.warmup=0.02",
            "--set",
            "physics.trajectories=1",
            "--set",
            "physics.train_trajectories=1",
            "--set",
            "conditioning.sparse_n=4",
            "--set",
            "run.seed=6",
            "--output",
            "d32.sclo",
        ],
    );
    assert_ok(&out);

    let out = run_in(
        dir.path(),
        &[
            "sample",
            "--set",
            "run.seed=5",
            "--dataset",
            "d32.sclo",
            "--checkpoint",
            "m.sclk",
            "--limit",
            "2",
            "--output-dir",
            "xres",
        ],
    );
    assert_ok(&out);
    let summary = std::fs::read_to_string(dir.path().join("xres/summary.csv")).unwrap();
    let row = summary.lines().nth(1).expect("one model row");
    let d_fro: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!(d_fro.is_finite(), "{summary}");
}

#[test]
fn simulate_reports_costs_and_the_truth_identity() {
    let dir = tempfile::tempdir().unwrap();

    let args = [
        "simulate",
        "--set",
        "physics.resolution=16",
        "--set",
        "conditioning.sparse_n=4",
        "--set",
        "rollout.warmup=0.05",
        "--set",
        "rollout.horizon=0.2",
        "--set",
        "rollout.record_every=50",
        "--set",
        "run.seed=5",
        "--settings",
        "I",
        "--with-truth",
        "--output-dir",
        "rolls",
    ];
    let out = run_in(dir.path(), &args);
    assert_ok(&out);

    let table = std::fs::read_to_string(dir.path().join("rolls/settings.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("total_seconds"), "{table}");
    assert!(header.contains("terminal_d_fro"), "{table}");

    let truth_row = table.lines().find(|l| l.starts_with("truth,")).unwrap();
    let terminal: f64 = truth_row.split(',').next_back().unwrap().parse().unwrap();
    assert!(
        terminal < 1e-10,
        "recorded truth closure must reproduce the reference: {table}"
    );
    assert!(dir.path().join("rolls/rollout_I.csv").exists());
}

#[test]
fn evaluate_self_comparison_spectrum_and_correlation() {
    let dir = tempfile::tempdir().unwrap();
    generate_tiny(dir.path(), "d.sclo");

    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--set",
            "physics.resolution=16",
            "--set",
            "conditioning.sparse_n=4",
            "--dataset",
            "d.sclo",
            "--metrics-out",
            "self.csv",
            "--spectrum-out",
            "spec.csv",
            "--correlation",
            "g",
            "--correlation-out",
            "corr.csv",
        ],
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("mean d_fro 0.000000e0"), "{text}");
    assert!(text.contains("slope"), "{text}");
    assert!(text.contains("peak |C|"), "{text}");
    for file in ["self.csv", "spec.csv", "corr.csv"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }

    let out = run_in(dir.path(), &["evaluate", "--dataset", "d.sclo"]);
    assert_eq!(out.status.code(), Some(2), "no outputs requested is a config error");
}
