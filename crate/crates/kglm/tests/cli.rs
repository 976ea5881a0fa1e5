//! End-to-end CLI tests: exit codes, file outputs, determinism of outputs.

use std::path::Path;
use std::process::Command;

fn kglm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kglm"))
}

fn write(path: &Path, content: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, content).unwrap();
}

/// A small connected graph with descriptions; test triples keep train coverage.
fn write_inputs(dir: &Path) {
    let train = "\
alpha\tlinks\tbeta
beta\tlinks\tgamma
gamma\tlinks\tdelta
delta\tlinks\talpha
alpha\tnear\tgamma
beta\tnear\tdelta
gamma\tnear\talpha
delta\tnear\tbeta
alpha\tlinks\tgamma
beta\tlinks\tdelta
";
    let test = "\
alpha\tnear\tbeta
gamma\tnear\tdelta
";
    let descs = "\
alpha\tred keeper of the north gate
beta\tblue keeper of the east gate
gamma\tgreen keeper of the south gate
delta\tgray keeper of the west gate
";
    write(&dir.join("train.tsv"), train);
    write(&dir.join("test.tsv"), test);
    write(&dir.join("descs.tsv"), descs);
}

const FAST: &[&str] = &[
    "--set",
    "layers=1",
    "--set",
    "model_dim=16",
    "--set",
    "heads=2",
    "--set",
    "ffn_dim=32",
    "--set",
    "max_len=48",
    "--set",
    "batch_size=4",
    "--set",
    "total_steps=8",
    "--set",
    "warmup_steps=2",
    "--set",
    "subgraph_max_triples=3",
];

#[test]
fn full_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_inputs(root);
    let ds = root.join("ds");
    let run = root.join("run");

    // ingest
    let out = kglm()
        .args(["ingest", "--train"])
        .arg(root.join("train.tsv"))
        .arg("--test")
        .arg(root.join("test.tsv"))
        .arg("--descriptions")
        .arg(root.join("descs.tsv"))
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "ingest failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(ds.join("dataset.txt")).unwrap();
    assert!(manifest.contains("entities=4"), "{manifest}");
    assert!(manifest.contains("train_triples=10"), "{manifest}");
    assert!(ds.join("vocab.tsv").exists());

    // train twice with the same seed: primary outputs must be byte-identical
    let run2 = root.join("run2");
    for dir in [&run, &run2] {
        let out = kglm()
            .args(["train", "--data"])
            .arg(&ds)
            .arg("--out")
            .arg(dir)
            .args(FAST)
            .args(["--seed", "3"])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "train failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let log1 = std::fs::read(run.join("loss.log")).unwrap();
    let log2 = std::fs::read(run2.join("loss.log")).unwrap();
    assert_eq!(log1, log2, "loss logs differ between identical runs");
    let p1 = std::fs::read(run.join("checkpoint-final/params.bin")).unwrap();
    let p2 = std::fs::read(run2.join("checkpoint-final/params.bin")).unwrap();
    assert_eq!(p1, p2, "checkpoints differ between identical runs");
    let log_text = String::from_utf8(log1).unwrap();
    assert_eq!(log_text.lines().count(), 8);
    for line in log_text.lines() {
        assert_eq!(line.split('\t').count(), 5, "loss log line format: {line}");
    }

    // eval with both scorers
    for scorer in ["mask-logit", "embed-cosine"] {
        let eval_dir = root.join(format!("eval-{scorer}"));
        let out = kglm()
            .args(["eval", "--data"])
            .arg(&ds)
            .arg("--checkpoint")
            .arg(run.join("checkpoint-final"))
            .arg("--out")
            .arg(&eval_dir)
            .args(["--scorer", scorer])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "eval {scorer} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let report = std::fs::read_to_string(eval_dir.join("report.txt")).unwrap();
        assert!(report.contains("protocol=filtered"));
        assert!(report.contains("n_queries=4"), "{report}");
        assert!(eval_dir.join("report.tsv").exists());
    }

    // embed-dump
    let dump = root.join("emb.tsv");
    let out = kglm()
        .args(["embed-dump", "--data"])
        .arg(&ds)
        .arg("--checkpoint")
        .arg(run.join("checkpoint-final"))
        .arg("--out")
        .arg(&dump)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap().split('\t').count(), 1 + 16);
}

#[test]
fn zero_shot_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_inputs(root);
    let ds = root.join("ds");
    let status = kglm()
        .args(["ingest", "--train"])
        .arg(root.join("train.tsv"))
        .arg("--test")
        .arg(root.join("test.tsv"))
        .arg("--descriptions")
        .arg(root.join("descs.tsv"))
        .arg("--out")
        .arg(&ds)
        .status()
        .unwrap();
    assert!(status.success());

    // derive and emit a split (no checkpoint needed)
    let split_dir = root.join("zs-files");
    let out = kglm()
        .args(["zero-shot-eval", "--data"])
        .arg(&ds)
        .args(["--fraction", "0.25", "--split-seed", "5", "--emit-split"])
        .arg(&split_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(split_dir.join("train.tsv").exists());
    assert!(split_dir.join("test.tsv").exists());

    // ingest the emitted split, train on it, then evaluate zero-shot
    let zs_ds = root.join("zs-ds");
    let status = kglm()
        .args(["ingest", "--train"])
        .arg(split_dir.join("train.tsv"))
        .arg("--test")
        .arg(split_dir.join("test.tsv"))
        .arg("--descriptions")
        .arg(root.join("descs.tsv"))
        .arg("--out")
        .arg(&zs_ds)
        .status()
        .unwrap();
    assert!(status.success());
    let zs_run = root.join("zs-run");
    let status = kglm()
        .args(["train", "--data"])
        .arg(&zs_ds)
        .arg("--out")
        .arg(&zs_run)
        .args(FAST)
        .status()
        .unwrap();
    assert!(status.success());
    let zs_eval = root.join("zs-eval");
    let out = kglm()
        .args(["zero-shot-eval", "--data"])
        .arg(&zs_ds)
        .arg("--checkpoint")
        .arg(zs_run.join("checkpoint-final"))
        .arg("--out")
        .arg(&zs_eval)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(zs_eval.join("report.txt")).unwrap();
    assert!(report.contains("unseen_coverage=1"), "{report}");
}

#[test]
fn mask_dump_all_text_is_all_zeros() {
    let out = kglm()
        .args(["mask-dump", "--text", "three plain words"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let grid = String::from_utf8(out.stdout).unwrap();
    // BOS + 3 words + EOS = 5 positions, fully bidirectional
    assert_eq!(grid.lines().count(), 5);
    for line in grid.lines() {
        assert_eq!(line, "00000");
    }
}

#[test]
fn grad_check_subcommand_passes() {
    let out = kglm().arg("grad-check").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn usage_errors_exit_one() {
    // unknown subcommand
    let out = kglm().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // eval without a checkpoint: usage text, exit 1
    let out = kglm()
        .args(["eval", "--data", "/nonexistent", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.to_lowercase().contains("usage") || err.contains("--checkpoint"),
        "{err}"
    );

    // unknown config key
    let out = kglm()
        .args(["mask-dump", "--text", "x", "--set", "learning_rate=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tsv");
    std::fs::write(&bad, "no tabs here\n").unwrap();
    let out = kglm()
        .args(["ingest", "--train"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "{err}");
}
