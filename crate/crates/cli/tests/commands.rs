//! The `fedface` binary end to end: exit codes, run directories, manifests
//! and replays.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedface_cli::pipeline::{evaluate, pretrain_backbone, Benchmark, DATA_DIR_ENV};
use fedface_cli::{RunConfig, RunManifest};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn fedface(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedface"))
        .args(args)
        .current_dir(cwd)
        .env(DATA_DIR_ENV, data_dir())
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A benchmark small enough for a few seconds per command.
const SMALL: &str = "n_identities = 40\npublic_identities = 40\npublic_images_per_identity = 6\n\
pretrain_epochs = 2\nn_rounds = 3\nwarmup_batches = 5\nattack_iterations = 4\nattack_images = 1\n";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = fedface(&["pretrain", "--config", "no/such.cfg"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("no/such.cfg"), "{}", stderr(&missing));

    fs::write(tmp.path().join("bad.cfg"), "n_rounds = 3\nlrr = 0.1\n").unwrap();
    let bad = fedface(&["federate", "--config", "bad.cfg"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("bad.cfg:2") && stderr(&bad).contains("`lrr`"), "{}", stderr(&bad));

    assert_eq!(fedface(&["pretrain", "--bogus"], tmp.path()).status.code(), Some(1));
    assert_eq!(fedface(&["frobnicate"], tmp.path()).status.code(), Some(1));
    let help = fedface(&["--help"], tmp.path());
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("warmup_batches"));
}

#[test]
fn missing_mnist_is_a_config_error_naming_the_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fedface"))
        .args(["attack", "--out", "a"])
        .current_dir(tmp.path())
        .env(DATA_DIR_ENV, tmp.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let e = stderr(&out);
    assert!(e.contains("images-idx3-ubyte") && e.contains("labels-idx1-ubyte") && e.contains(DATA_DIR_ENV), "{e}");
}

#[test]
fn flags_land_in_the_manifest_and_rounds_are_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let o = fedface(&["federate", "--config", cfg, "--no-freeze-bn", "--no-warmup", "--seed", "7", "--out", "f"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::load(&tmp.path().join("f/manifest.json")).unwrap();
    let rc = m.run_config().unwrap();
    assert!(!rc.freeze_bn);
    assert_eq!(rc.warmup_batches, 0);
    assert_eq!((rc.seed, m.seed), (7, 7));
    assert_eq!(rc.n_rounds, 3);
    let rounds = fs::read_to_string(tmp.path().join("f/rounds.csv")).unwrap();
    let mut lines = rounds.lines();
    assert_eq!(lines.next(), Some("round,mean_local_loss,tar_at_far_1e2,tar_at_far_1e3"));
    assert_eq!(lines.count(), 3);
    assert!(m.outputs.iter().any(|f| f.path == "federated.ckpt"));
}

#[test]
fn default_run_directories_do_not_collide() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    for _ in 0..2 {
        assert!(fedface(&["pretrain", "--config", cfg], tmp.path()).status.success());
    }
    let runs: Vec<String> = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.contains("-pretrain")), "{runs:?}");
}

#[test]
fn evaluating_a_checkpoint_against_itself_gives_zero_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert!(fedface(&["pretrain", "--config", cfg, "--out", "p"], tmp.path()).status.success());
    let o = fedface(
        &["evaluate", "--config", cfg, "--checkpoint", "p/pretrained.ckpt", "--compare", "p/pretrained.ckpt", "--out", "e"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("e/compare.json")).unwrap()).unwrap();
    assert_eq!(report["delta_tar_far_1e2"], 0.0);
    assert_eq!(report["delta_tar_far_1e3"], 0.0);
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert!(fedface(&["pretrain", "--config", cfg, "--out", "p"], tmp.path()).status.success());
    assert!(fedface(&["federate", "--config", cfg, "--checkpoint", "p/pretrained.ckpt", "--out", "f"], tmp.path()).status.success());

    // Replays may run from anywhere; inputs were recorded as absolute paths.
    let elsewhere = tmp.path().join("elsewhere");
    fs::create_dir(&elsewhere).unwrap();
    let ok = fedface(&["replay", tmp.path().join("f").to_str().unwrap(), "--out", "r"], &elsewhere);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("bit-identical"));
    let a = fs::read(tmp.path().join("f/federated.ckpt")).unwrap();
    assert_eq!(a, fs::read(elsewhere.join("r/federated.ckpt")).unwrap());

    let path = tmp.path().join("p/manifest.json");
    let mut m = RunManifest::load(&path).unwrap();
    m.outputs[0].crc32 ^= 1;
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let bad = fedface(&["replay", path.to_str().unwrap(), "--out", "r2"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains(&m.outputs[0].path));
}

#[test]
fn pretraining_separates_held_out_public_identities() {
    let cfg = RunConfig::default();
    let bench = Benchmark::generate(&cfg).unwrap();
    let pre = pretrain_backbone(&cfg, &bench).unwrap();
    let tar = evaluate(&cfg, &pre.backbone, &bench.public_pairs).unwrap().tar_far_1e2;
    assert!(tar >= 0.9, "public held-out TAR@FAR=1e-2 {tar}");
}
