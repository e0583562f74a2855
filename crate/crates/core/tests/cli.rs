use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gstvqa::Checkpoint;
use gstvqa::autograd::Matrix;
use gstvqa::features::{FeatureSequence, write_feature_file};
use gstvqa::params::FEATURE_DIM;

fn gstvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gstvqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gstvqa(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(out: &Path, seed: u64) {
    ok(&[
        "gen-synthetic",
        "--out",
        s(out),
        "--videos",
        "12",
        "--t-min",
        "1",
        "--t-max",
        "6",
        "--holdout",
        "5",
        "--seed",
        &seed.to_string(),
    ]);
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) {
    let manifest = data.join("train.csv");
    let mut args = vec![
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(out),
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--quiet",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn dir_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn missing_manifest_exits_with_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = gstvqa(&["train", "--manifest", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(s(&missing)), "{stderr}");
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(&dir.path().join("data"), 0);
    let manifest = dir.path().join("data/train.csv");
    let out = gstvqa(&["train", "--manifest", s(&manifest), "--ablation", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let garbage = dir.path().join("garbage.gstc");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = gstvqa(&["eval", "--checkpoint", s(&garbage), "--manifest", s(&manifest)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_synthetic_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    gen_small(&a, 3);
    gen_small(&b, 3);
    gen_small(&c, 4);
    let contents = dir_contents(&a);
    assert_eq!(contents.len(), 12 + 3);
    assert_eq!(contents, dir_contents(&b));
    assert_ne!(contents, dir_contents(&c));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    gen_small(&data, 1);
    train_small(&data, &run, &["--ablation", "no_pyramid", "--seed", "5"]);

    let checkpoint = run.join("checkpoint.gstc");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,l_vid,l_reg,r_gan,d_loss");
    assert_eq!(lines.len(), 3);
    let ck = Checkpoint::load(&checkpoint).unwrap();
    assert!(ck.config.ablation.no_pyramid);
    assert_eq!((ck.config.seed, ck.epoch), (5, 2));

    let eval_dir = dir.path().join("eval");
    let test = data.join("test.csv");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&checkpoint),
        "--manifest",
        s(&test),
        "--sweep",
        "--out",
        s(&eval_dir),
    ]);
    assert!(stdout.starts_with("metric,value\nlambda,0\ncount,5\n"), "{stdout}");
    let sweep = fs::read_to_string(eval_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 11);
    assert!(sweep.starts_with("lambda,srocc,krocc,plcc,rmse,beta1,beta2,beta3,beta4,beta5,fit_converged\n0.0,"));
    assert!(sweep.lines().last().unwrap().starts_with("1.8,"));
    assert!(eval_dir.join("report.csv").exists());

    let predictions = fs::read_to_string(eval_dir.join("predictions.csv")).unwrap();
    for line in predictions.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let features = data.join("features").join(format!("{}.gstf", fields[0]));
        let args = ["predict", "--checkpoint", s(&checkpoint), "--features", s(&features)];
        let first = ok(&args);
        assert_eq!(first, ok(&args));
        let score: f64 = first.trim().parse().unwrap();
        assert_eq!(score, fields[2].parse::<f64>().unwrap(), "{line}");
    }
}

#[test]
fn predict_handles_a_single_frame_and_fusion() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    gen_small(&data, 2);
    train_small(&data, &run, &[]);

    let one = FeatureSequence::new(
        "single",
        Matrix::from_elem((1, FEATURE_DIM), 0.3),
        Matrix::from_elem((1, FEATURE_DIM), 0.7),
    )
    .unwrap();
    let path = dir.path().join("single.gstf");
    write_feature_file(&path, &one).unwrap();
    let checkpoint = run.join("checkpoint.gstc");
    let base = ["predict", "--checkpoint", s(&checkpoint), "--features", s(&path)];
    let q_vid: f64 = ok(&base).trim().parse().unwrap();
    assert!(q_vid.is_finite());

    let mut zero = base.to_vec();
    zero.extend(["--fusion-lambda", "0"]);
    assert_eq!(ok(&zero).trim().parse::<f64>().unwrap(), q_vid);
    let mut fused = base.to_vec();
    fused.extend(["--fusion-lambda", "1"]);
    assert!(ok(&fused).trim().parse::<f64>().unwrap().is_finite());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 6);
    let config = dir.path().join("run.json");
    let out = dir.path().join("from_config");
    fs::write(
        &config,
        format!(
            r#"{{"manifest": "{}", "out": "{}", "epochs": 3, "batch_size": 4, "seed": 11}}"#,
            s(&data.join("train.csv")),
            s(&out)
        ),
    )
    .unwrap();
    ok(&["train", "--config", s(&config), "--epochs", "1", "--quiet"]);
    let ck = Checkpoint::load(out.join("checkpoint.gstc")).unwrap();
    assert_eq!((ck.epoch, ck.config.seed, ck.config.batch_size), (1, 11, 4));
}
