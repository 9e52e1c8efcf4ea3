//! End-to-end tests of the command-line interface, driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn evae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evae"))
        .args(args)
        .env("EVAE_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out_dir: &Path, controller: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    let text = format!(
        "[run]\ntotal_iters = 60\nseed = 5\nbatch_size = 8\nlog_interval = 5\nouter_interval = 10\nout_dir = {}\n\n\
         [model]\nlatent_dim = 3\nencoder_hidden = 24\ndecoder_hidden = 24\n\n\
         [data]\ncanvas = 16\nshapes = 2\nscales = 2\norientations = 2\npositions = 2\ncache = {}\n\n\
         [controller]\nkind = {controller}\n\n\
         [vga]\npopulation = 4\ntrial_window = 4\nset_point = 2\n\n\
         [constant]\nbeta = 4\n",
        out_dir.display(),
        dir.join("sprites.bin").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &out, "vga");
    let result = evae(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for artifact in [
        "metrics.csv",
        "timing.csv",
        "vga_events.csv",
        "final.ckpt",
        "manifest.cfg",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,beta,recon_loss,kl_total,total_loss,fitness,kl_0"));
}

#[test]
fn constant_controller_logs_constant_beta_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &out, "constant");
    let result = evae(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        let beta = line.split(',').nth(1).unwrap();
        assert_eq!(beta, "4");
    }
    assert!(out.join("schedule_trace.csv").exists());
}

#[test]
fn missing_required_key_exits_2_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        format!("[run]\nseed = 1\nout_dir = {}\n", out.display()),
    )
    .unwrap();
    let result = evae(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("total_iters"), "{stderr}");
    assert!(!out.exists(), "partial outputs were created");
}

#[test]
fn unknown_key_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        "[run]\ntotal_iters = 10\nmystery = 1\n[controller]\nkind = constant\n",
    )
    .unwrap();
    let result = evae(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("line 3") && stderr.contains("mystery"),
        "{stderr}"
    );
}

#[test]
fn manifest_plus_cache_reproduces_run_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let cfg = write_config(dir.path(), &out_a, "vga");
    assert!(evae(&["run", "--config", cfg.to_str().unwrap()])
        .status
        .success());

    // Re-execute from the emitted manifest into a different directory.
    let out_b = dir.path().join("b");
    let manifest = out_a.join("manifest.cfg");
    let result = evae(&[
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let a = std::fs::read(out_a.join("metrics.csv")).unwrap();
    let b = std::fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(a, b, "manifest re-execution diverged");
}

#[test]
fn seed_override_changes_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let cfg = write_config(dir.path(), &out_a, "constant");
    assert!(evae(&["run", "--config", cfg.to_str().unwrap()])
        .status
        .success());
    let out_b = dir.path().join("b");
    assert!(evae(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        out_b.to_str().unwrap()
    ])
    .status
    .success());
    let a = std::fs::read(out_a.join("metrics.csv")).unwrap();
    let b = std::fs::read(out_b.join("metrics.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn controller_override_and_swap_gates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &out, "constant");
    // Override to vga and swap the gate order; manifest must reflect both.
    let result = evae(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--controller",
        "vga",
        "--swap-gates",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let manifest = std::fs::read_to_string(out.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("kind = vga"));
    assert!(manifest.contains("gate_order = mutation-first"));
    // --swap-gates without vga is a usage error.
    let bad = evae(&["run", "--config", cfg.to_str().unwrap(), "--swap-gates"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn traverse_renders_expected_grid_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &out, "constant");
    assert!(evae(&["run", "--config", cfg.to_str().unwrap()])
        .status
        .success());
    let pgm = dir.path().join("grid.pgm");
    let result = evae(&[
        "traverse",
        "--checkpoint",
        out.join("final.ckpt").to_str().unwrap(),
        "--data",
        dir.path().join("sprites.bin").to_str().unwrap(),
        "--index",
        "2",
        "--steps",
        "5",
        "--out",
        pgm.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let bytes = std::fs::read(&pgm).unwrap();
    // 5 steps x 16 px wide, 3 dims x 16 px tall.
    let header = format!("P5\n{} {}\n255\n", 5 * 16, 3 * 16);
    assert!(bytes.starts_with(header.as_bytes()));
    assert_eq!(bytes.len(), header.len() + 5 * 16 * 3 * 16);

    // Out-of-range dimension is a usage error.
    let bad = evae(&[
        "traverse",
        "--checkpoint",
        out.join("final.ckpt").to_str().unwrap(),
        "--data",
        dir.path().join("sprites.bin").to_str().unwrap(),
        "--dim",
        "7",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn export_round_trips_metrics_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &out, "vga");
    assert!(evae(&["run", "--config", cfg.to_str().unwrap()])
        .status
        .success());
    let exp = dir.path().join("exports");
    let result = evae(&[
        "export",
        "--metrics",
        out.join("metrics.csv").to_str().unwrap(),
        "--out-dir",
        exp.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rd = std::fs::read_to_string(exp.join("rd_curve.csv")).unwrap();
    assert_eq!(rd.lines().count(), metrics.lines().count());
    // Row values are verbatim copies of the metrics fields.
    let m1: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let r1: Vec<&str> = rd.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(r1, vec![m1[0], m1[3], m1[2]]);
    let beta = std::fs::read_to_string(exp.join("beta_trace.csv")).unwrap();
    assert_eq!(beta.lines().count(), metrics.lines().count());
    let long = std::fs::read_to_string(exp.join("kl_dims_long.csv")).unwrap();
    assert_eq!(long.lines().count(), (metrics.lines().count() - 1) * 3 + 1);

    // Schema mismatch names the offending column.
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "iteration,beta\n0,1\n").unwrap();
    let bad = evae(&[
        "export",
        "--metrics",
        broken.to_str().unwrap(),
        "--out-dir",
        exp.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("kl_total"));
}

#[test]
fn gen_data_writes_cache_and_pgm_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &dir.path().join("x"), "constant");
    let cache = dir.path().join("ds.bin");
    let pgms = dir.path().join("pgms");
    let result = evae(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
        "--pgm-dir",
        pgms.to_str().unwrap(),
        "--pgm-count",
        "3",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(cache.exists());
    assert_eq!(std::fs::read_dir(&pgms).unwrap().count(), 3);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("32 images"), "{stdout}");
}
