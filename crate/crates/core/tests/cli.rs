mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::write_tissue_dataset;

fn histoconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histoconv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_small(data: &Path, out: &Path, epochs: &str) -> Output {
    histoconv(&[
        "train", "--data", s(data), "--out", s(out), "--epochs", epochs, "--batch-size", "4",
        "--input-size", "32", "--seed", "9", "--ratios", "0.5,0.25,0.25", "--checkpoint-every", "1",
    ])
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(histoconv(&[]).status.code(), Some(2));
    assert_eq!(histoconv(&["train", "--epochs", "0"]).status.code(), Some(2));
    assert_eq!(histoconv(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(histoconv(&["train", "--epochs", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(histoconv(&["train", "--data", s(&missing)]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.hcv");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = histoconv(&["export-filters", "--checkpoint", s(&bogus), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_lists_every_verb() {
    let out = histoconv(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for verb in ["train", "evaluate", "predict", "export-filters", "plot", "split"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let classes = write_tissue_dataset(&data, 2, 6, 40, 1);
    let run = dir.path().join("run");
    let out = train_small(&data, &run, "2");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("ckpt_ep1.hcv").exists());
    assert!(run.join("ckpt_ep2.hcv").exists());
    assert!(run.join("manifest.tsv").exists());

    let ckpt = run.join("ckpt_ep2.hcv");
    let eval = |split: &str| histoconv(&["evaluate", "--checkpoint", s(&ckpt), "--split", split]);
    let first = eval("val");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(first.stdout, eval("val").stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("split,loss,accuracy"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "val");
    let acc: f64 = row[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let both = histoconv(&[
        "evaluate", "--checkpoint", s(&run.join("ckpt_ep1.hcv")), s(&ckpt), "--split", "test",
    ]);
    assert!(both.status.success());
    let text = String::from_utf8(both.stdout).unwrap();
    assert!(text.contains('±'), "{text}");

    let img = data.join(&classes[1]).join(format!("{}_0000.png", classes[1]));
    let pred = histoconv(&["predict", "--checkpoint", s(&ckpt), s(&img)]);
    assert!(pred.status.success());
    let line = String::from_utf8(pred.stdout).unwrap();
    let fields: Vec<&str> = line.trim().split(',').collect();
    assert_eq!(fields.len(), 4);
    assert!(classes.iter().any(|c| c == fields[1]));
    let total: f64 = fields[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5);

    let missing = dir.path().join("nope.png");
    let pred = histoconv(&["predict", "--checkpoint", s(&ckpt), s(&img), s(&missing)]);
    assert_eq!(pred.status.code(), Some(1));
    assert_eq!(String::from_utf8(pred.stdout).unwrap().lines().count(), 1);
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_tissue_dataset(&data, 2, 6, 40, 2);
    let full = dir.path().join("full");
    assert!(train_small(&data, &full, "3").status.success());

    let part = dir.path().join("part");
    assert!(train_small(&data, &part, "1").status.success());
    let out = histoconv(&["train", "--resume", s(&part.join("ckpt_ep1.hcv")), "--epochs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read(full.join("metrics.csv")).unwrap();
    let b = std::fs::read(part.join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(full.join("ckpt_ep3.hcv")).unwrap(),
        std::fs::read(part.join("ckpt_ep3.hcv")).unwrap()
    );
}

#[test]
fn split_writes_a_manifest_and_plot_renders_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_tissue_dataset(&data, 3, 10, 20, 3);
    let manifest = dir.path().join("m.tsv");
    let out = histoconv(&["split", "--data", s(&data), "--seed", "4", "--out", s(&manifest)]);
    assert!(out.status.success());
    let m = histoconv::data::DatasetManifest::read(&manifest).unwrap();
    assert_eq!(m.class_split_counts(), vec![[8, 1, 1]; 3]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("class_0"));

    let csv = dir.path().join("metrics.csv");
    std::fs::write(&csv, "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.0,0.4,1.1,0.3\n2,0.8,0.6,0.9,0.5\n").unwrap();
    let plots = dir.path().join("plots");
    let out = histoconv(&["plot", "--metrics", s(&csv), "--out", s(&plots)]);
    assert!(out.status.success());
    assert!(plots.join("loss.png").exists() && plots.join("accuracy.png").exists());

    std::fs::write(&csv, "epoch,train_loss\n1,oops\n").unwrap();
    assert_eq!(histoconv(&["plot", "--metrics", s(&csv), "--out", s(&plots)]).status.code(), Some(1));
}
