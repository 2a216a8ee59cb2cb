// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
corpus.train = 80
corpus.probe = 40
corpus.val = 20
corpus.test = 24
model.epochs = 2
probe.epochs = 30
codec.epochs = 3
codebook.codes = 8
codebook.epochs = 3
edit.sequences = 4
edit.max_iters = 40
eval.bins = 5
";

const PIPELINE: &[&[&str]] = &[
    &["corpus", "gen"],
    &["model", "train"],
    &["probe", "train"],
    &["probe", "analyze-layers"],
    &["probe", "analyze-neurons"],
    &["codec", "train"],
    &["codebook", "train"],
    &["edit", "prosody"],
    &["edit", "pronounce"],
    &["eval", "ratios"],
    &["eval", "per"],
    &["eval", "entangle"],
    &["eval", "correction"],
];

fn cfedit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfedit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CFEDIT_OUT")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn run_pipeline(out: &Path, cfg: &Path, threads: &str) {
    for step in PIPELINE {
        let mut args: Vec<&str> = step.to_vec();
        args.extend(["--config", cfg.to_str().unwrap(), "--threads", threads]);
        let o = cfedit(out, &args);
        assert!(
            o.status.success(),
            "{step:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&a, &cfg, "1");
    run_pipeline(&b, &cfg, "3");

    let corpus = std::fs::read_to_string(a.join("corpus.csv")).unwrap();
    assert_eq!(corpus.lines().next(), Some("CFEDIT-CORPUS v1"));

    let files = csv_files(&a);
    assert_eq!(files, csv_files(&b));
    for rel in [
        "analysis/layers_pitch.csv",
        "analysis/layers_semantic_token.csv",
        "analysis/neurons_pitch.csv",
        "eval/ratios.csv",
        "eval/per.csv",
        "eval/entangle.csv",
        "eval/correction.csv",
        "edits/prosody.csv",
        "edits/pronounce.csv",
    ] {
        assert!(files.contains(&PathBuf::from(rel)), "missing {rel}");
    }
    for f in &files {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{} differs between runs",
            f.display()
        );
    }
    for m in ["corpus-gen", "probe-analyze-layers", "eval-correction"] {
        let json = std::fs::read_to_string(a.join(format!("manifests/{m}.json"))).unwrap();
        assert!(json.contains("\"status\": \"ok\""));
    }
}

#[test]
fn layer_csv_is_normalized_and_identity_ratio_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("o");
    run_pipeline(&out, &cfg, "2");
    let mut r = csv::Reader::from_path(out.join("analysis/layers_duration.csv")).unwrap();
    let norm: Vec<f64> = r
        .records()
        .map(|x| x.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(norm.len(), 4);
    assert_eq!(norm.iter().cloned().fold(f64::MIN, f64::max), 1.0);

    let mut r = csv::Reader::from_path(out.join("eval/ratios.csv")).unwrap();
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[1] == "1.000000" {
            assert_eq!(&rec[3], "1.000000", "{rec:?}");
            seen += 1;
        }
    }
    assert_eq!(seen, 12);
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfedit(tmp.path(), &["corpus", "gen", "--corpus.bogus", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.bogus"));
}

#[test]
fn overrides_take_precedence_over_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = cfedit(
        tmp.path(),
        &[
            "corpus",
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--corpus.test",
            "30",
        ],
    );
    assert!(o.status.success());
    let echoed = std::fs::read_to_string(tmp.path().join("config/corpus-gen.cfg")).unwrap();
    assert!(echoed.contains("corpus.test = 30"));
    assert!(echoed.contains("corpus.train = 80"));
}

#[test]
fn missing_upstream_artifact_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfedit(tmp.path(), &["model", "train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus"));
    assert!(tmp
        .path()
        .join("manifests/model-train.json.partial")
        .exists());
}

#[test]
fn codec_wider_than_activations_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let c = cfg.to_str().unwrap();
    for step in [&["corpus", "gen"][..], &["model", "train"][..]] {
        let mut args = step.to_vec();
        args.extend(["--config", c]);
        assert!(cfedit(tmp.path(), &args).status.success());
    }
    let o = cfedit(
        tmp.path(),
        &["codec", "train", "--config", c, "--codec.k", "64"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cfedit"))
        .args([
            "corpus",
            "gen",
            "--corpus.train",
            "10",
            "--corpus.probe",
            "5",
        ])
        .env("CFEDIT_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("corpus.csv").exists());
}

#[test]
fn failed_run_leaves_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let c = cfg.to_str().unwrap();
    for step in [&["corpus", "gen"][..], &["model", "train"][..]] {
        let mut args = step.to_vec();
        args.extend(["--config", c]);
        assert!(cfedit(tmp.path(), &args).status.success());
    }
    // neuron analysis needs trained probes
    let o = cfedit(tmp.path(), &["probe", "analyze-neurons", "--config", c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(tmp
        .path()
        .join("manifests/probe-analyze-neurons.json.partial")
        .exists());
    assert!(!tmp
        .path()
        .join("manifests/probe-analyze-neurons.json")
        .exists());
}
