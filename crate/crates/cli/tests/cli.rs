use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use painnet_cli::{resolve_config, run};
use painnet_core::{LossKind, TrainConfig};

fn run_ok(args: &[&str]) -> String {
    let mut out = Vec::new();
    let mut full = vec!["painnet"];
    full.extend_from_slice(args);
    if let Err(e) = run(full, &mut out) {
        panic!("{}", e.line());
    }
    String::from_utf8(out).unwrap()
}

fn run_err(args: &[&str]) -> String {
    let mut full = vec!["painnet"];
    full.extend_from_slice(args);
    run(full, &mut Vec::new()).unwrap_err().line()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn small_dataset(dir: &Path) -> String {
    let d = dir.join("data");
    run_ok(&[
        "synth",
        "--videos-per-class",
        "4",
        "--synth.subjects",
        "10",
        "--synth.max_frames",
        "64",
        "--seed",
        "3",
        "--out",
        d.to_str().unwrap(),
    ]);
    d.join("manifest.csv").to_str().unwrap().to_string()
}

#[test]
fn synth_writes_132_videos_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let msg = run_ok(&[
            "synth",
            "--videos-per-class",
            "12",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(msg.contains("132 videos"));
    }
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 133);
    assert!(a.join("provenance.txt").exists());
    assert!(a.join("config.resolved").exists());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn binary_reports_single_line_errors() {
    let bin = env!("CARGO_BIN_EXE_painnet");
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = Command::new(bin)
        .args(["synth", "--out", blocker.join("sub").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[io]: "), "{err}");

    let out = Command::new(bin)
        .args(["train", "--comparison", "foo"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error[config]: relation.comparison"));

    let out = Command::new(bin).args(["nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error[usage]: "));

    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("train.episodes"));
}

#[test]
fn defaults_mirror_the_reference_settings() {
    let m = painnet_cli::command().get_matches_from(["painnet", "train"]);
    let cfg = resolve_config(m.subcommand_matches("train").unwrap()).unwrap();
    let t = cfg.train_config().unwrap();
    assert_eq!(t, TrainConfig::default());
    assert_eq!((t.episodes, t.lr, t.clip), (1500, 0.005, 1.0));
    assert_eq!(cfg.model_config().unwrap().dropout, 0.5);

    let m = painnet_cli::command().get_matches_from(["painnet", "train", "--loss", "bce"]);
    let cfg = resolve_config(m.subcommand_matches("train").unwrap()).unwrap();
    assert_eq!(cfg.train_config().unwrap().loss, LossKind::Bce);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.cfg");
    fs::write(&file, "# small run\ntrain.episodes = 7\ntrain.lr = 0.01\n").unwrap();
    let m = painnet_cli::command().get_matches_from([
        "painnet",
        "train",
        "--config",
        file.to_str().unwrap(),
        "--train.lr",
        "0.002",
        "--seed",
        "5",
    ]);
    let cfg = resolve_config(m.subcommand_matches("train").unwrap()).unwrap();
    assert_eq!(cfg.get("train.episodes").unwrap(), "7");
    assert_eq!(cfg.get("train.lr").unwrap(), "0.002");
    assert_eq!(cfg.get("synth.seed").unwrap(), "5");

    fs::write(&file, "train.episodes = 7\nbogus.key = 1\n").unwrap();
    let err = run_err(&["train", "--config", file.to_str().unwrap()]);
    assert!(
        err.starts_with("error[config]") && err.contains("line 2"),
        "{err}"
    );
    assert!(run_err(&["train", "--eval.sample_sets", "4"]).contains("odd"));
}

#[test]
fn train_then_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(tmp.path());
    let out = tmp.path().join("run");
    let common = [
        "--manifest",
        &manifest,
        "--seed",
        "3",
        "--episodes",
        "100",
        "--trial",
        "1",
    ];
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&common);
    let msg = run_ok(&args);
    assert!(msg.starts_with("trial 1:"), "{msg}");
    for f in [
        "config.resolved",
        "train.log",
        "ckpt/best.ckpt",
        "report/metrics.jsonl",
        "report/intensity.csv",
        "run.meta",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("train.episodes = 100\n"));

    let preds = fs::read_to_string(out.join("report/predictions.csv")).unwrap();
    let row: Vec<&str> = preds.lines().nth(1).unwrap().split(',').collect();
    let video = Path::new(&manifest)
        .parent()
        .unwrap()
        .join("features")
        .join(format!("{}.csv", row[0]));
    let ckpt = out.join("ckpt/best.ckpt");
    let mut args = vec![
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--video",
        video.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    let label = run_ok(&args);
    assert_eq!(
        label.trim(),
        row[2],
        "predict agrees with the trial's test prediction"
    );

    args.push("--emit-probs");
    let table = run_ok(&args);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 5);
    for row in &lines[2..] {
        let cells: Vec<f64> = row.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 11);
        assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }

    let mut args = vec![
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--video",
        video.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--gru.hidden", "8"]);
    assert!(run_err(&args).starts_with("error[checkpoint]: checkpoint shape mismatch"));
}

#[test]
fn crossval_reports_every_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(tmp.path());
    let cols = "AU1,AU2,AU4,AU6,AU7,AU9,AU10,AU12,AU25,AU26";
    let out = tmp.path().join("cv");
    let msg = run_ok(&[
        "crossval",
        "--manifest",
        &manifest,
        "--episodes",
        "50",
        "--folds",
        "3",
        "--cv.val_count",
        "5",
        "--operators",
        "mean,std",
        "--au-columns",
        cols,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(msg.lines().count(), 4);
    let report = fs::read_to_string(out.join("report/metrics.jsonl")).unwrap();
    let kinds: Vec<String> = report
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["record"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(kinds, ["header", "fold", "fold", "fold", "summary"]);
    for i in 0..3 {
        assert!(out.join(format!("ckpt/trial{i}.ckpt")).exists());
    }
    let intensity = fs::read_to_string(out.join("report/intensity.csv")).unwrap();
    assert_eq!(intensity.lines().next(), Some("intensity,mae"));
}

#[test]
fn gradcheck_passes_and_catches_an_injected_fault() {
    let text = run_ok(&["gradcheck", "--seeds", "2"]);
    assert!(text.lines().all(|l| l.contains(" pass ")), "{text}");
    assert!(text.contains("stat_layer") && text.contains("composite.euccos"));

    let err = run_err(&["gradcheck", "--seeds", "2", "--inject-fault", "stat_layer"]);
    assert_eq!(err, "error[gradcheck]: failing layers: stat_layer");
}
