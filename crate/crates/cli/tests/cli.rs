//! Command-level behavior: exit codes, file layout, and the smaller
//! contract examples that don't need a trained model.

use std::path::{Path, PathBuf};
use std::process::Command;

use reach_core::config::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reach"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        iterations: 1,
        episode_steps: 30,
        episodes_per_iteration: 2,
        memory_size: 10,
        transition_hidden_size: 8,
        policy_hidden_size: 8,
        transition_batch_size: 2,
        policy_batch_size: 2,
        transition_batches_per_iteration: 1,
        policy_batches_per_iteration: 1,
        warmup_steps: 10,
        unroll_steps: 5,
        heldout_episodes: 1,
        log_wall_time: false,
        ..TrainConfig::default()
    }
}

#[test]
fn missing_config_file_names_the_path() {
    let out = tmp("missing_config");
    let output = bin()
        .args(["train", "--config", "/nonexistent/cfg.txt", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("/nonexistent/cfg.txt"), "{stderr}");
}

#[test]
fn unknown_config_key_is_rejected_with_suggestion() {
    let out = tmp("bad_key");
    let cfg = out.join("config.txt");
    std::fs::write(&cfg, "episod_steps = 100\n").unwrap();
    let output = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(
        stderr.contains("episod_steps") && stderr.contains("episode_steps"),
        "{stderr}"
    );
}

#[test]
fn zero_iterations_leaves_manifest_and_initial_checkpoints() {
    let out = tmp("zero_iters");
    let cfg = out.join("config.txt");
    std::fs::write(&cfg, tiny_config().emit()).unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--iterations", "0"])
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "manifest.txt",
        "config_snapshot.txt",
        "transition_init.ck",
        "policy_init.ck",
        "transition.ck",
        "policy.ck",
        "state.ck",
        "log.csv",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1, "log should only have the header");
    // Initial and latest checkpoints agree before any training.
    assert_eq!(
        std::fs::read(out.join("transition_init.ck")).unwrap(),
        std::fs::read(out.join("transition.ck")).unwrap()
    );
}

#[test]
fn train_writes_log_rows_and_resumes() {
    let out = tmp("train_small");
    let cfg_path = out.join("config.txt");
    let mut cfg = tiny_config();
    cfg.iterations = 2;
    std::fs::write(&cfg_path, cfg.emit()).unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");

    // Resume with a higher target and check the log extends.
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(["--resume", "--iterations", "4"])
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5, "{log}");
}

#[test]
fn seed_env_var_overrides_config_seed() {
    let out_a = tmp("seed_env_a");
    let out_b = tmp("seed_env_b");
    let cfg = tiny_config();
    let cfg_path = out_a.join("config.txt");
    std::fs::write(&cfg_path, cfg.emit()).unwrap();

    let run = |out: &Path, seed: &str| {
        let status = bin()
            .env("SEED", seed)
            .args(["train", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(out.join("config_snapshot.txt")).unwrap()
    };
    let snap_a = run(&out_a, "7");
    let snap_b = run(&out_b, "8");
    assert!(snap_a.contains("seed = 7"));
    assert!(snap_b.contains("seed = 8"));
    assert_ne!(
        std::fs::read(out_a.join("policy.ck")).unwrap(),
        std::fs::read(out_b.join("policy.ck")).unwrap()
    );
}

#[test]
fn eval_lqr_writes_one_report_per_gamma_with_eight_rows() {
    let out = tmp("eval_lqr");
    let status = bin()
        .args(["eval", "--lqr", "--variant", "stationary"])
        .args(["--gamma", "0,30,60,90", "--steps", "40", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reports: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            (name.starts_with("report_") && name.ends_with(".csv")).then_some(name)
        })
        .collect();
    assert_eq!(reports.len(), 4, "{reports:?}");
    let one = std::fs::read_to_string(out.join(&reports[0])).unwrap();
    assert_eq!(one.lines().count(), 9, "{one}");
    assert!(one.starts_with("controller,variant,gamma,target_idx,J\n"));
    let sweep = std::fs::read_to_string(out.join("sweep_lqr_stationary.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert!(out.join("manifest.txt").exists());
    // SVG plots alongside.
    assert!(std::fs::read_dir(&out)
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".svg")));
}

#[test]
fn eval_loads_self_described_checkpoint() {
    let out = tmp("eval_ckpt");
    let cfg_path = out.join("config.txt");
    // A different hidden size than any default: the checkpoint must carry it.
    let mut cfg = tiny_config();
    cfg.policy_hidden_size = 24;
    std::fs::write(&cfg_path, cfg.emit()).unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let eval_out = tmp("eval_ckpt_out");
    let status = bin()
        .args(["eval", "--checkpoint"])
        .arg(out.join("policy.ck"))
        .args(["--variant", "moving", "--steps", "40", "--gamma", "0", "--out"])
        .arg(&eval_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(eval_out.join("sweep_policy_moving.csv").exists());
}

#[test]
fn eval_rejects_non_checkpoint_files() {
    let out = tmp("eval_bad_ckpt");
    let fake = out.join("not_a_checkpoint.ck");
    std::fs::write(&fake, b"junk").unwrap();
    let output = bin()
        .args(["eval", "--checkpoint"])
        .arg(&fake)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn gradcheck_passes_and_corrupt_hook_fails() {
    let ok = bin().arg("gradcheck").output().unwrap();
    assert!(ok.status.success());
    let corrupt = bin().args(["gradcheck", "--corrupt"]).output().unwrap();
    assert!(!corrupt.status.success());
}

#[test]
fn gradcheck_output_is_reproducible() {
    let a = bin().args(["gradcheck", "--seed", "5"]).output().unwrap();
    let b = bin().args(["gradcheck", "--seed", "5"]).output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    let c = bin().args(["gradcheck", "--seed", "6"]).output().unwrap();
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn lqr_kappa_changes_gain_but_not_residual_quality() {
    let out = bin().args(["lqr", "--kappa", "1"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    // The position gain sqrt(q/r) is invariant in kappa; the damping gain
    // sqrt(q2/r + 2 k1 / kappa) is not.
    assert!(!stdout.contains("1.50496215"), "{stdout}");
    assert!(stdout.contains("2.70639156"), "{stdout}");
    let residual: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("care_residual = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual <= 1e-9);
}

#[test]
fn lqr_writes_artifacts() {
    let out = tmp("lqr_files");
    let status = bin().args(["lqr", "--out"]).arg(&out).status().unwrap();
    assert!(status.success());
    for file in ["gain.csv", "riccati.csv", "scenario.csv", "manifest.txt"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let scenario = std::fs::read_to_string(out.join("scenario.csv")).unwrap();
    assert!(scenario.starts_with(reach_core::trace::TRACE_HEADER));
    assert_eq!(scenario.lines().count(), 201);
}

#[test]
fn rollout_dumps_episode_csvs() {
    let out = tmp("rollout");
    let status = bin()
        .args(["rollout", "--controller", "random", "--episodes", "3"])
        .args(["--steps", "25", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for e in 0..3 {
        let path = out.join(format!("rollout_{e:03}.csv"));
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 26);
    }
}
