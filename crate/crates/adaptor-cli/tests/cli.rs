//! End-to-end tests of the `adaptor` binary: artifact layout, determinism,
//! resume, exit codes, and inspect output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptor_cli::runconfig::{Manifest, MetricsLine, ReportFile};

const SPEC: &str = r#"{"n_samples": 100, "d_latent": 4, "d_img": 12, "d_txt": 10, "n_classes": 3, "noise_sigma": 0.05, "seed": 5}"#;
const CONFIG: &str = r#"{
  "adaptor": {"d_img": 12, "d_txt": 10, "d_shared": 16, "n_layers": 1, "n_heads": 2},
  "train": {"batch_size": 16, "epochs": 2, "lr": 0.001, "seed": 3}
}"#;

fn adaptor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptor"))
        .args(args)
        .env("ADAPTOR_DETERMINISTIC", "1")
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> String {
    let out = adaptor(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn run_err(args: &[&str], code: i32) -> String {
    let out = adaptor(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).expect("utf-8 stderr")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write test input");
}

fn s(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Standard fixture: synth caches plus a trained checkpoint.
struct Fixture {
    _dir: tempfile::TempDir,
    caches: PathBuf,
    run: PathBuf,
    config: PathBuf,
}

fn fixture(train_epochs: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, SPEC);
    let config = dir.path().join("config.json");
    write(&config, &CONFIG.replace(r#""epochs": 2"#, &format!(r#""epochs": {train_epochs}"#)));
    let caches = dir.path().join("caches");
    let run = dir.path().join("run");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&caches)]);
    run_ok(&["pretrain", "--config", s(&config), "--cache", s(&caches), "--out", s(&run)]);
    Fixture { _dir: dir, caches, run, config }
}

fn read_metrics(path: &Path) -> Vec<MetricsLine> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("metrics line parses"))
        .collect()
}

#[test]
fn synth_writes_three_caches_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, SPEC);
    let out = dir.path().join("caches");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);

    for name in ["train.adpc", "val.adpc", "test.adpc", "manifest.json", "spec.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    // The spec echo is verbatim.
    assert_eq!(std::fs::read_to_string(out.join("spec.json")).unwrap(), SPEC);

    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let ns: Vec<usize> = manifest.splits.iter().map(|e| e.n_samples).collect();
    assert_eq!(ns, vec![80, 10, 10]);

    // Inspect echoes the generator's dimensions.
    let train = out.join("train.adpc");
    let stdout = run_ok(&["inspect", "--path", s(&train)]);
    for needle in ["n_samples:   80", "d_img:       12", "d_txt:       10", "checksum:    OK"] {
        assert!(stdout.contains(needle), "inspect output lacks {needle:?}:\n{stdout}");
    }
}

#[test]
fn synth_same_seed_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, SPEC);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&out1)]);
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&out2)]);
    for name in ["train.adpc", "val.adpc", "test.adpc", "manifest.json", "spec.json"] {
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn synth_invalid_spec_exits_2_naming_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(
        &spec,
        r#"{"n_samples": 50, "d_latent": 64, "d_img": 12, "d_txt": 10, "n_classes": 3}"#,
    );
    let out = dir.path().join("caches");
    let stderr = run_err(&["synth", "--spec", s(&spec), "--out", s(&out)], 2);
    assert!(stderr.contains("d_latent"), "constraint not named: {stderr}");
}

#[test]
fn synth_output_dir_is_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, SPEC);
    let out = dir.path().join("caches");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    let stderr = run_err(&["synth", "--spec", s(&spec), "--out", s(&out)], 2);
    assert!(stderr.contains("append-only"), "{stderr}");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&out), "--force"]);
}

#[test]
fn pretrain_smoke_writes_three_artifacts() {
    let f = fixture(2);
    assert!(f.run.join("checkpoint.adpk").exists());
    assert!(f.run.join("metrics.jsonl").exists());
    // The config echo is verbatim.
    assert_eq!(
        std::fs::read_to_string(f.run.join("config.json")).unwrap(),
        std::fs::read_to_string(&f.config).unwrap()
    );

    let metrics = read_metrics(&f.run.join("metrics.jsonl"));
    assert_eq!(metrics.len(), 2);
    assert_eq!(metrics[0].epoch, 1);
    assert_eq!(metrics[1].epoch, 2);
    // 80 train samples / batch 16 = 5 steps per epoch.
    assert_eq!(metrics[0].step, 5);
    assert_eq!(metrics[1].step, 10);
    // Deterministic mode zeroes wall clocks; a val cache next to the train
    // cache is picked up automatically.
    for m in &metrics {
        assert_eq!(m.wall_ms, 0);
        assert!(m.val_loss.is_some(), "val.adpc should provide val_loss");
        assert!(m.loss.is_finite());
    }
}

#[test]
fn pretrain_is_deterministic_across_runs() {
    let f = fixture(2);
    let dir = tempfile::tempdir().unwrap();
    let run2 = dir.path().join("run2");
    run_ok(&["pretrain", "--config", s(&f.config), "--cache", s(&f.caches), "--out", s(&run2)]);
    assert_eq!(
        std::fs::read(f.run.join("metrics.jsonl")).unwrap(),
        std::fs::read(run2.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(f.run.join("checkpoint.adpk")).unwrap(),
        std::fs::read(run2.join("checkpoint.adpk")).unwrap()
    );
}

#[test]
fn pretrain_missing_cache_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, CONFIG);
    let stderr = run_err(
        &[
            "pretrain",
            "--config",
            s(&config),
            "--cache",
            s(&dir.path().join("nowhere")),
            "--out",
            s(&dir.path().join("run")),
        ],
        2,
    );
    assert!(stderr.contains("nowhere"), "{stderr}");
}

#[test]
fn pretrain_dimension_mismatch_exits_2() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    write(&config, &CONFIG.replace(r#""d_img": 12"#, r#""d_img": 24"#));
    let stderr = run_err(
        &[
            "pretrain",
            "--config",
            s(&config),
            "--cache",
            s(&f.caches),
            "--out",
            s(&dir.path().join("run")),
        ],
        2,
    );
    assert!(stderr.contains("expects 24"), "{stderr}");
}

#[test]
fn resume_continues_metrics_without_discontinuity() {
    // One-shot 5-epoch run.
    let f5 = fixture(5);
    // 3 epochs, then resume to 5 in place.
    let f3 = fixture(3);
    let config5 = f3.config.with_file_name("config5.json");
    write(
        &config5,
        &std::fs::read_to_string(&f3.config).unwrap().replace(r#""epochs": 3"#, r#""epochs": 5"#),
    );
    let ckpt = f3.run.join("checkpoint.adpk");
    run_ok(&[
        "pretrain",
        "--config",
        s(&config5),
        "--cache",
        s(&f3.caches),
        "--out",
        s(&f3.run),
        "--resume",
        s(&ckpt),
    ]);

    let resumed = read_metrics(&f3.run.join("metrics.jsonl"));
    assert_eq!(resumed.len(), 5);
    let epochs: Vec<u64> = resumed.iter().map(|m| m.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
    let steps: Vec<u64> = resumed.iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![5, 10, 15, 20, 25], "no step discontinuity across the boundary");

    // The stitched log and final checkpoint match the one-shot run bitwise.
    assert_eq!(
        std::fs::read(f3.run.join("metrics.jsonl")).unwrap(),
        std::fs::read(f5.run.join("metrics.jsonl")).unwrap()
    );
    let one_shot = std::fs::read(f5.run.join("checkpoint.adpk")).unwrap();
    let stitched = std::fs::read(f3.run.join("checkpoint.adpk")).unwrap();
    assert_eq!(one_shot, stitched);
}

#[test]
fn resume_with_changed_hyperparameters_exits_2() {
    let f = fixture(1);
    let config = f.config.with_file_name("changed.json");
    write(
        &config,
        &std::fs::read_to_string(&f.config).unwrap().replace(r#""lr": 0.001"#, r#""lr": 0.002"#),
    );
    let ckpt = f.run.join("checkpoint.adpk");
    let stderr = run_err(
        &[
            "pretrain",
            "--config",
            s(&config),
            "--cache",
            s(&f.caches),
            "--out",
            s(&f.run),
            "--resume",
            s(&ckpt),
        ],
        2,
    );
    assert!(stderr.contains("different configuration"), "{stderr}");
}

#[test]
fn nan_abort_exits_3() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("diverge.json");
    write(
        &config,
        r#"{
  "adaptor": {"d_img": 12, "d_txt": 10, "d_shared": 16, "n_layers": 1, "n_heads": 2, "normalize_outputs": false},
  "train": {"batch_size": 16, "epochs": 2, "lr": 1e200, "seed": 3}
}"#,
    );
    let stderr = run_err(
        &[
            "pretrain",
            "--config",
            s(&config),
            "--cache",
            s(&f.caches),
            "--out",
            s(&dir.path().join("run")),
        ],
        3,
    );
    assert!(stderr.contains("numeric"), "{stderr}");
}

#[test]
fn eval_reports_recall_in_range() {
    let f = fixture(4);
    let ckpt = f.run.join("checkpoint.adpk");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--cache",
        s(&f.caches),
        "--ks",
        "1,5",
        "--probe-epochs",
        "50",
    ]);
    let report: ReportFile = serde_json::from_str(&stdout).expect("report JSON parses");
    assert_eq!(report.recall_at_k.len(), 2);
    for entry in &report.recall_at_k {
        assert!((0.0..=1.0).contains(&entry.recall), "recall@{} = {}", entry.k, entry.recall);
    }
    assert!((0.0..=1.0).contains(&report.probe_accuracy));
    assert!((0.0..=1.0).contains(&report.separability_before));
    assert!((0.0..=1.0).contains(&report.separability_after));
    assert!(report.frozen_verified);
    assert_eq!(report.probe.data_fraction, 1.0);
    // 3 classes: no binary AUROC.
    assert!(report.probe_auroc.is_none());
}

#[test]
fn eval_writes_report_and_respects_append_only() {
    let f = fixture(2);
    let ckpt = f.run.join("checkpoint.adpk");
    let out = f.run.join("eval");
    run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--cache",
        s(&f.caches),
        "--ks",
        "1",
        "--probe-epochs",
        "20",
        "--out",
        s(&out),
    ]);
    let report: ReportFile =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.recall_at_k.len(), 1);
    let stderr = run_err(
        &[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--cache",
            s(&f.caches),
            "--ks",
            "1",
            "--probe-epochs",
            "20",
            "--out",
            s(&out),
        ],
        2,
    );
    assert!(stderr.contains("append-only"), "{stderr}");
}

#[test]
fn eval_tiny_fraction_keeps_one_sample_per_class() {
    let f = fixture(2);
    let ckpt = f.run.join("checkpoint.adpk");
    // Single-file mode on the 100-sample cache: the probe trains on a
    // stratified 1% subset of the same file it is scored on.
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, &SPEC.replace("\"n_samples\": 100", "\"n_samples\": 1000"));
    let big = dir.path().join("big");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&big)]);
    let test_cache = big.join("test.adpc");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--cache",
        s(&test_cache),
        "--fraction",
        "0.01",
        "--ks",
        "1",
        "--probe-epochs",
        "20",
    ]);
    let report: ReportFile = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report.probe.data_fraction, 0.01);

    // Subsetting arithmetic: 1% of a 100-sample 3-class cache keeps
    // max(1, floor(0.01 · n_c)) = exactly one sample per class.
    let cache = adaptor_cli::adpc::read_cache(&test_cache).unwrap();
    assert_eq!(cache.n_samples(), 100);
    let labels = cache.labels().unwrap();
    let subset = adaptor_core::eval::stratified_subset(labels, 0.01, 0).unwrap();
    assert_eq!(subset.len(), 3, "one sample per class");
    let classes: std::collections::BTreeSet<u32> =
        subset.iter().map(|&i| labels[i]).collect();
    assert_eq!(classes.len(), 3);
}

#[test]
fn eval_untrained_checkpoint_recall_is_chance_level() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, &SPEC.replace("\"n_samples\": 100", "\"n_samples\": 520"));
    let caches = dir.path().join("caches");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&caches)]);

    // Fresh-init checkpoint, written through the library: the CLI refuses
    // epochs = 0, which is exactly what makes this state untrained.
    let config_text = CONFIG;
    let rcf = adaptor_cli::runconfig::RunConfigFile::parse(
        config_text,
        std::path::Path::new("config.json"),
    )
    .unwrap();
    let config = rcf.to_train_config();
    let state = adaptor_core::trainer::init_state(&config).unwrap();
    let ckpt = dir.path().join("fresh.adpk");
    adaptor_cli::adpk::save_checkpoint(&config, &state, &ckpt).unwrap();

    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--cache",
        s(&caches),
        "--ks",
        "1",
        "--probe-epochs",
        "20",
    ]);
    let report: ReportFile = serde_json::from_str(&stdout).unwrap();
    // 52 test samples: chance is ≈ 1/52 ≈ 0.019; allow generous noise.
    assert!(
        report.recall_at_k[0].recall <= 0.15,
        "untrained recall@1 = {}",
        report.recall_at_k[0].recall
    );
}

#[test]
fn eval_incompatible_dims_exits_2() {
    let f = fixture(1);
    let ckpt = f.run.join("checkpoint.adpk");
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(&spec, &SPEC.replace("\"d_img\": 12", "\"d_img\": 20"));
    let other = dir.path().join("other");
    run_ok(&["synth", "--spec", s(&spec), "--out", s(&other)]);
    let stderr = run_err(
        &["eval", "--checkpoint", s(&ckpt), "--cache", s(&other), "--ks", "1"],
        2,
    );
    assert!(stderr.contains("20"), "{stderr}");
}

#[test]
fn inspect_checkpoint_reports_param_count() {
    let f = fixture(1);
    let ckpt = f.run.join("checkpoint.adpk");
    let stdout = run_ok(&["inspect", "--path", s(&ckpt)]);
    let rcf = adaptor_cli::runconfig::RunConfigFile::parse(
        CONFIG,
        std::path::Path::new("config.json"),
    )
    .unwrap();
    let expected = rcf.to_adaptor_config().param_count();
    assert!(
        stdout.contains(&format!("param_count: {expected}")),
        "expected param_count {expected} in:\n{stdout}"
    );
    assert!(stdout.contains("epoch 1"), "{stdout}");
    assert!(stdout.contains("checksum:    OK"), "{stdout}");
}

#[test]
fn inspect_corrupted_cache_reports_fail_and_exits_2() {
    let f = fixture(1);
    let train = f.caches.join("train.adpc");
    let mut bytes = std::fs::read(&train).unwrap();
    bytes[60] ^= 0x20;
    std::fs::write(&train, &bytes).unwrap();

    let out = adaptor(&["inspect", "--path", s(&train)]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "checksum FAIL not reported:\n{stdout}");
}

#[test]
fn inspect_unknown_magic_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mystery.bin");
    std::fs::write(&path, b"WHAT????????").unwrap();
    let stderr = run_err(&["inspect", "--path", s(&path)], 2);
    assert!(stderr.contains("unknown magic"), "{stderr}");
}

#[test]
fn import_text_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("dump.txt");
    write(
        &text,
        "0 1 0.5 -1.25 0.75 | 2.0 3.5\n1 0 1.5 2.5 -0.5 | -1.0 0.0\n2 1 0.25 0.5 1.0 | 4.0 5.0\n",
    );
    let out = dir.path().join("imported.adpc");
    run_ok(&["import", "--text", s(&text), "--out", s(&out), "--split", "test"]);

    let cache = adaptor_cli::adpc::read_cache(&out).unwrap();
    assert_eq!(cache.n_samples(), 3);
    assert_eq!(cache.d_img(), 3);
    assert_eq!(cache.d_txt(), 2);
    assert_eq!(cache.labels(), Some(&[1, 0, 1][..]));
    assert_eq!(cache.split(), adaptor_core::data::Split::Test);

    // Append-only without --force.
    let stderr = run_err(&["import", "--text", s(&text), "--out", s(&out)], 2);
    assert!(stderr.contains("append-only"), "{stderr}");
    run_ok(&["import", "--text", s(&text), "--out", s(&out), "--force"]);
}

#[test]
fn bad_config_json_exits_2() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("typo.json");
    write(
        &config,
        r#"{"adaptor": {"d_img": 12, "d_txt": 10, "d_shared": 16, "n_heds": 2}}"#,
    );
    let stderr = run_err(
        &[
            "pretrain",
            "--config",
            s(&config),
            "--cache",
            s(&f.caches),
            "--out",
            s(&dir.path().join("run")),
        ],
        2,
    );
    assert!(stderr.contains("n_heds"), "unknown key not reported: {stderr}");
}
