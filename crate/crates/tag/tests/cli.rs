use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tag::report::{AugmentManifest, EvalSummary, RunManifest, SplitStats};

const TINY: &str = "d = 8\nlayers = 1\nheads = 2\nlr = 0.003\nbatch_size = 4\nmax_iters = 40\n\
                    lr_decay_steps = 30\nlr_decay_factor = 0.1\nseed = 3\n";

fn tag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tag")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tag(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(&["synth", "--scenes", "40", "--seed", seed, "--out", p(dir)]);
}

#[test]
fn synth_writes_splits_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a, "7");
    synth(&b, "7");
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "stats.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let stats: Vec<SplitStats> = read_json(a.join("stats.json"));
    assert_eq!(stats.len(), 3);
    assert_eq!(stats.iter().map(|s| s.scenes).sum::<usize>(), 40);
    assert!(stats
        .iter()
        .filter(|s| s.scenes > 0)
        .all(|s| s.mean_ocr_per_image >= 5.0));
    let ma: RunManifest = read_json(a.join("manifest.json"));
    let mb: RunManifest = read_json(b.join("manifest.json"));
    assert_eq!(ma.command, "synth");
    assert_eq!(ma.outputs.len(), 4);
    let hashes = |m: &RunManifest| m.outputs.iter().map(|h| h.sha256.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&ma), hashes(&mb));
}

#[test]
fn full_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let data = root.join("data");
    synth(&data, "1");
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let train = data.join("train.jsonl");

    let tagdir = root.join("tag");
    ok(&[
        "train-tag",
        "--config",
        p(&cfg),
        "--corpus",
        p(&train),
        "--out",
        p(&tagdir),
    ]);
    let curve = std::fs::read_to_string(tagdir.join("loss.csv")).unwrap();
    let rows: Vec<Vec<f64>> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(curve.lines().next(), Some("iter,lr,loss"));
    assert_eq!(rows.len(), 5, "iters 0,10,20,30 and the last");
    assert!(rows.last().unwrap()[2] < rows[0][2], "loss did not fall: {curve}");
    let ckpt = tagdir.join("tag.ckpt");
    let model = tag::checkpoint::load(&ckpt).unwrap();
    assert_eq!(tag::checkpoint::encode(&model), std::fs::read(&ckpt).unwrap());

    let augdir = root.join("aug");
    ok(&[
        "augment",
        "--checkpoint",
        p(&ckpt),
        "--corpus",
        p(&train),
        "--strategy",
        "largest",
        "--out",
        p(&augdir),
    ]);
    let m: AugmentManifest = read_json(augdir.join("augment_manifest.json"));
    let originals = tag::corpus::load_corpus(&train).unwrap();
    let augmented = tag::corpus::load_corpus(&augdir.join("augmented.jsonl")).unwrap();
    assert_eq!(m.strategy, "largest");
    assert_eq!(m.scenes, originals.len());
    assert_eq!(m.generated + m.rejected_empty + m.rejected_duplicate, m.scenes);
    let pairs: usize = augmented.iter().map(|s| s.qa_pairs.len()).sum();
    assert_eq!(pairs, 2 * originals.len() - m.rejected_empty - m.rejected_duplicate);
    for (a, o) in augmented.iter().zip(&originals) {
        assert_eq!(a.qa_pairs[..o.qa_pairs.len()], o.qa_pairs[..]);
    }
    let dump = std::fs::read_to_string(augdir.join("dump.jsonl")).unwrap();
    assert!(dump.lines().count() <= 20);
    for line in dump.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["answer"].is_string() && v["generated_question"].is_string());
    }

    let aug_corpus = augdir.join("augmented.jsonl");
    let val = data.join("val.jsonl");
    let mut evals = Vec::new();
    for (name, corpus) in [("original", &train), ("augmented", &aug_corpus)] {
        let dir = root.join(name);
        ok(&[
            "train-vqa",
            "--config",
            p(&cfg),
            "--corpus",
            p(corpus),
            "--out",
            p(&dir),
        ]);
        let e1 = root.join(format!("{name}-eval1"));
        let e2 = root.join(format!("{name}-eval2"));
        for e in [&e1, &e2] {
            ok(&[
                "eval",
                "--checkpoint",
                p(&dir.join("vqa.ckpt")),
                "--corpus",
                p(&val),
                "--out",
                p(e),
            ]);
        }
        let s1: EvalSummary = read_json(e1.join("eval.json"));
        let s2: EvalSummary = read_json(e2.join("eval.json"));
        assert_eq!(s1, s2);
        assert_eq!(s1.label, name);
        assert_eq!(
            std::fs::read(e1.join("eval.csv")).unwrap(),
            std::fs::read(e2.join("eval.csv")).unwrap()
        );
        evals.push(e1.join("eval.json"));
    }
    let man: RunManifest = read_json(root.join("augmented").join("manifest.json"));
    let scaled = man
        .config
        .lines()
        .find(|l| l.starts_with("max_iters"))
        .unwrap()
        .to_owned();
    let want = tag_core::config::scale_iters(40, originals.len(), pairs);
    assert_eq!(scaled, format!("max_iters = {want}"));

    let rep = root.join("report");
    let mut args = vec!["report", "--out", p(&rep)];
    args.extend(evals.iter().map(|e| p(e)));
    ok(&args);
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let md = std::fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("**"));
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_owned()
}

#[test]
fn augmenting_held_out_scenes_is_refused() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "2");
    let cfg = t.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY.replace("max_iters = 40", "max_iters = 1")).unwrap();
    let tagdir = t.path().join("tag");
    ok(&[
        "train-tag",
        "--config",
        p(&cfg),
        "--corpus",
        p(&data.join("train.jsonl")),
        "--out",
        p(&tagdir),
    ]);
    for split in ["val.jsonl", "test.jsonl"] {
        let out = tag(&[
            "augment",
            "--checkpoint",
            p(&tagdir.join("tag.ckpt")),
            "--corpus",
            p(&data.join(split)),
            "--out",
            p(&t.path().join("aug")),
        ]);
        assert_eq!(error_kind(&out), "leakage");
        let out = tag(&[
            "train-tag",
            "--config",
            p(&cfg),
            "--corpus",
            p(&data.join(split)),
            "--out",
            p(&tagdir),
        ]);
        assert_eq!(error_kind(&out), "leakage");
    }
    assert!(!t.path().join("aug").join("augmented.jsonl").exists());
}

#[test]
fn failures_emit_error_records() {
    let t = tempfile::tempdir().unwrap();
    let out = tag(&[
        "eval",
        "--checkpoint",
        "/no/such.ckpt",
        "--corpus",
        "/no/val.jsonl",
        "--out",
        p(t.path()),
    ]);
    assert_eq!(error_kind(&out), "missing_artifact");
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such.ckpt"));

    let cfg = t.path().join("bad.cfg");
    std::fs::write(&cfg, "d = 8\nwidth = 3\n").unwrap();
    synth(&t.path().join("d"), "0");
    let train = t.path().join("d").join("train.jsonl");
    let out = tag(&[
        "train-tag",
        "--config",
        p(&cfg),
        "--corpus",
        p(&train),
        "--out",
        p(t.path()),
    ]);
    assert_eq!(error_kind(&out), "config");
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    let out = tag(&[
        "augment",
        "--checkpoint",
        p(&train),
        "--corpus",
        p(&train),
        "--strategy",
        "biggest",
    ]);
    assert_eq!(error_kind(&out), "config");

    let out = tag(&["ablate", "--which", "colour"]);
    assert!(!out.status.success());
}
