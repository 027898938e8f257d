use std::path::Path;
use std::process::{Command, Output};

fn mdbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdbnet"))
        .args(args)
        .env_remove("MDBNET_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_passes_and_prints_every_op() {
    let o = mdbnet(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines.len() >= 20);
    for l in &lines {
        let err: f64 = l.split_whitespace().rev().nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-5, "{l}");
        assert!(l.ends_with("ok"));
    }
    assert!(out.contains("itrm") && out.contains("preact"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(mdbnet(&["gradcheck", "--no-such-flag"]).status.code(), Some(64));
    assert_eq!(mdbnet(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(mdbnet(&["train", "--fusion", "sideways"]).status.code(), Some(64));
    assert_eq!(mdbnet(&[]).status.code(), Some(64));
    assert_eq!(mdbnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // Unknown config key.
    let o = mdbnet(&["gen", "--out", p(&out), "--set", "train.bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\n[model]\nwidth = 3\n").unwrap();
    assert_eq!(
        mdbnet(&["gen", "--config", p(&cfg), "--out", p(&out)]).status.code(),
        Some(1)
    );
    // Missing manifest, a single fold, a malformed manifest.
    assert_eq!(mdbnet(&["weights", "--out", p(&out)]).status.code(), Some(1));
    assert_eq!(
        mdbnet(&["train", "--folds", "1", "--out", p(&out)]).status.code(),
        Some(1)
    );
    let bad = dir.path().join("m.txt");
    std::fs::write(&bad, "a.png b.png\n").unwrap();
    assert_eq!(
        mdbnet(&["voxelize", "--manifest", p(&bad), "--out", p(&out)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(mdbnet(&["report", "--run", p(&out)]).status.code(), Some(1));
    assert_eq!(mdbnet(&["eval", "--run", p(&out)]).status.code(), Some(1));
}

#[test]
fn env_thread_count_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_mdbnet"))
        .args(["train", "--manifest", "nowhere.txt"])
        .env("MDBNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_gen_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = mdbnet(&["gen", "--scenes", "6", "--seed", "3", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = data.join("manifest.txt");
    assert_eq!(
        std::fs::read_to_string(&manifest)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count(),
        6
    );
    assert!(std::fs::read_to_string(data.join("config.toml"))
        .unwrap()
        .contains("seed = 3"));

    let vox = dir.path().join("vox");
    assert!(mdbnet(&["voxelize", "--manifest", p(&manifest), "--out", p(&vox)])
        .status
        .success());
    assert_eq!(std::fs::read_dir(&vox).unwrap().count(), 6);
    assert!(vox.join("scene0000_ftsdf.vxg").exists());

    let w = dir.path().join("w");
    let o = mdbnet(&["weights", "--manifest", p(&manifest), "--out", p(&w)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(w.join("class_weights.txt")).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert_eq!(stdout(&o), text);

    let run = dir.path().join("run");
    let train_args = [
        "train",
        "--manifest",
        p(&manifest),
        "--folds",
        "2",
        "--epochs",
        "1",
        "--fusion",
        "mid",
        "--block",
        "preact",
        "--weighting",
        "resample",
        "--lambda",
        "0.5",
        "--out",
        p(&run),
    ];
    let o = mdbnet(&train_args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    for needle in [
        "fusion = \"mid\"",
        "block = \"preact\"",
        "weighting_mode = \"resample\"",
        "lambda = 0.5",
        "folds = 2",
    ] {
        assert!(cfg.contains(needle), "{needle} missing from\n{cfg}");
    }
    for f in 0..2 {
        let fd = run.join(format!("fold{f}"));
        assert!(fd.join("checkpoint.mdb").exists());
        assert!(std::fs::read_to_string(fd.join("log.csv"))
            .unwrap()
            .starts_with("epoch,"));
    }
    let trained = std::fs::read_to_string(run.join("reports.csv")).unwrap();

    // Re-evaluating the saved checkpoints reproduces the training-time reports.
    assert!(mdbnet(&["eval", "--run", p(&run)]).status.success());
    assert_eq!(std::fs::read_to_string(run.join("reports.csv")).unwrap(), trained);

    // The echoed config alone reproduces the run.
    let rerun = dir.path().join("rerun");
    let o = mdbnet(&["train", "--config", p(&run.join("config.toml")), "--out", p(&rerun)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(rerun.join("reports.csv")).unwrap(), trained);
    assert_eq!(
        std::fs::read(run.join("fold1/checkpoint.mdb")).unwrap(),
        std::fs::read(rerun.join("fold1/checkpoint.mdb")).unwrap()
    );

    let o = mdbnet(&["report", "--run", p(&run), p(&rerun), "--label", "a", "b"]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.starts_with("Method"));
    assert!(table.contains('±'));
    assert_eq!(table.lines().count(), 4);

    let o = mdbnet(&["report", "--run", p(&run), "--ablation", "Fusion"]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.starts_with("Fusion") && table.contains("SSC-mIoU%"));
    assert!(table.lines().nth(2).unwrap().starts_with("run"));
}
