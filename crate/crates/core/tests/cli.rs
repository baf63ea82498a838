//! The `lorafl` binary end to end on a 500-image slice of the fixture.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lorafl::cost::{head_param_count, round_bytes};
use lorafl::experiment::metrics::decode_metrics;

fn lorafl(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    if !cfg.exists() {
        fs::write(
            &cfg,
            format!(
                "images = {}\nlabels = {}\nmax_images = 500\nlocal_epochs = 1\nrounds = 10\ntest_pairs = 200\nout_dir = out\n",
                common::mnist_images().display(),
                common::mnist_labels().display()
            ),
        )
        .unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_lorafl"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn default_sweep_writes_300_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    ok(lorafl(dir.path(), &["prepare"]));
    let manifest = fs::read(dir.path().join("out/prepared/manifest.txt")).unwrap();
    ok(lorafl(dir.path(), &["prepare"]));
    assert_eq!(fs::read(dir.path().join("out/prepared/manifest.txt")).unwrap(), manifest);

    ok(lorafl(dir.path(), &["federate", "--threads", "1"]));
    let csv_path = dir.path().join("out/metrics_federated.csv");
    let first = fs::read(&csv_path).unwrap();
    let ckpt_path = dir.path().join("out/checkpoints/federated_fold4_k32.lrfl");
    let ckpt = fs::read(&ckpt_path).unwrap();
    ok(lorafl(dir.path(), &["federate", "--threads", "4"]));
    assert_eq!(fs::read(&csv_path).unwrap(), first);
    assert_eq!(fs::read(&ckpt_path).unwrap(), ckpt);
    assert_eq!(ckpt.len(), 18 + 4 * head_param_count(784, 128, 32));

    let rows = decode_metrics(&String::from_utf8(first).unwrap()).unwrap();
    assert_eq!(rows.len(), 5 * 6 * 10);
    for r in &rows {
        let k: usize = r.k_or_dense.parse().unwrap();
        let payload = 4 * head_param_count(784, 128, k);
        assert_eq!(r.uplink_bytes + r.downlink_bytes, round_bytes(3, payload));
        assert!((0.0..=1.0).contains(&r.test_acc));
        assert_eq!(r.mode, "federated");
    }

    let svg = fs::read_to_string(dir.path().join("out/accuracy_federated.svg")).unwrap();
    assert_eq!(svg.matches("<g class=\"curve\"").count(), 6);
    assert!(roxmltree::Document::parse(&svg).is_ok());
}

#[test]
fn centralized_rows_are_marked_central() {
    let dir = tempfile::tempdir().unwrap();
    ok(lorafl(dir.path(), &["prepare"]));
    ok(lorafl(dir.path(), &["centralized", "--set", "ranks=4", "--set", "folds=2", "--set", "rounds=2"]));
    let text = fs::read_to_string(dir.path().join("out/metrics_central.csv")).unwrap();
    let rows = decode_metrics(&text).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.mode == "central" && r.uplink_bytes == 0));
}

#[test]
fn cost_report_has_one_dense_row_and_matching_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    ok(lorafl(dir.path(), &["cost", "--set", "ranks=8,32"]));
    let text = fs::read_to_string(dir.path().join("out/cost.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| r[0] == "dense").count(), 1);
    for r in &rows {
        assert_eq!(r[2], r[3], "payload vs checkpoint weight bytes");
    }
    let b8: f64 = rows[0][2].parse().unwrap();
    let b32: f64 = rows[1][2].parse().unwrap();
    assert_eq!(b32 / b8, 4.0);
    let svg = fs::read_to_string(dir.path().join("out/cost.svg")).unwrap();
    assert_eq!(svg.matches("<g class=\"bar-group\"").count(), 3);
    assert!(roxmltree::Document::parse(&svg).is_ok());
}

#[test]
fn bad_inputs_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = lorafl(dir.path(), &["prepare", "--set", "bogus_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    let out = lorafl(dir.path(), &["federate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare"));

    let images = common::mnist_images();
    let set = format!("cifar_batches={}", images.display());
    let out = lorafl(dir.path(), &["prepare", "--set", "dataset=cifar10", "--set", &set]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    ok(lorafl(dir.path(), &["prepare"]));
    let out = lorafl(dir.path(), &["federate", "--set", "clients=4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different data settings"));

    let out = lorafl(dir.path(), &["federate", "--set", "ranks=8,4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly increasing"));
}

#[test]
fn plot_redraws_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(lorafl(dir.path(), &["prepare"]));
    ok(lorafl(dir.path(), &["federate", "--set", "ranks=1,2", "--set", "folds=1", "--set", "rounds=2"]));
    let svg = dir.path().join("out/accuracy_federated.svg");
    let before = fs::read(&svg).unwrap();
    fs::remove_file(&svg).unwrap();
    let out = ok(lorafl(dir.path(), &["plot", "--set", "ranks=1,2"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy_federated.svg"));
    assert_eq!(fs::read(&svg).unwrap(), before);
}
