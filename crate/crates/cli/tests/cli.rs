use std::fs;
use std::path::Path;
use std::process::Command;

use wig_core::index::{mean, sample_sd, IndexSeries};
use wig_core::io::Checkpoint;
use wig_core::pipeline::{read_manifest_file, CHECKPOINT, INDEX, TUNE};

fn wig(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_wig")).current_dir(dir).args(args).output().expect("spawn wig");
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, text) = wig(dir, args);
    assert_eq!(code, 0, "wig {args:?} failed:\n{text}");
    text
}

fn record(manifest: &Path, key: &str) -> String {
    read_manifest_file(manifest).unwrap().into_iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("{key} missing")).1
}

fn small_corpus(dir: &Path) {
    ok(dir, &["synth", "--out", "corpus.jsonl", "--docs", "240", "--months", "24", "--words", "60"]);
    fs::write(
        dir.join("run.cfg"),
        "paths.corpus=corpus.jsonl\npaths.output=out\ntrain.topics=2\ntrain.epochs=2\ntrain.batch_size=32\nembed.epochs=2\nsinkhorn.unroll_iters=10\n",
    )
    .unwrap();
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    let out = dir.join("out");
    for stage in ["prep", "embed", "train", "index"] {
        ok(dir, &[stage, "--config", "run.cfg"]);
        assert!(out.join(format!("manifest-{stage}.txt")).exists());
    }
    // each stage's inputs carry the hashes the previous stage wrote
    let produced = record(&out.join("manifest-prep.txt"), "run.output.tokens.tsv");
    let consumed = record(&out.join("manifest-embed.txt"), "run.input.tokens.tsv");
    assert_eq!(consumed.split(' ').next().unwrap(), produced);
    let produced = record(&out.join("manifest-train.txt"), "run.output.model.ckpt");
    let consumed = record(&out.join("manifest-index.txt"), "run.input.model.ckpt");
    assert_eq!(consumed.split(' ').next().unwrap(), produced);

    let bytes = fs::read(out.join(CHECKPOINT)).unwrap();
    let ck = Checkpoint::read_from(bytes.as_slice()).unwrap();
    assert_eq!(ck.get("train.topics"), Some("2"));
    let mut again = Vec::new();
    ck.write_to(&mut again).unwrap();
    assert_eq!(again, bytes);

    let index = IndexSeries::read_csv(fs::read(out.join(INDEX)).unwrap().as_slice()).unwrap();
    assert_eq!(index.len(), 24);
    assert!((mean(index.values()) - 100.0).abs() < 1e-6);
    assert!((sample_sd(index.values()) - 1.0).abs() < 1e-6);

    fs::copy(out.join(INDEX), dir.join("reference.csv")).unwrap();
    ok(dir, &["eval", "--config", "run.cfg", "--reference", "reference.csv", "--plot"]);
    let report = fs::read_to_string(out.join("eval_report.csv")).unwrap();
    for metric in ["pearson_raw", "pearson_trend", "pearson_cycle", "spearman_raw", "spearman_trend", "spearman_cycle"] {
        assert!(report.lines().any(|l| l == format!("{metric},1")), "{metric} not 1 in\n{report}");
    }
    assert!(out.join("eval_plot.svg").exists());
}

#[test]
fn full_run_is_reproducible_and_manifest_replays_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(dir, &["run", "--config", "run.cfg", "--flip-index", "--monthly-mean", "--loss", "l2"]);
    let first = fs::read(dir.join("out").join(INDEX)).unwrap();
    let manifest = fs::read_to_string(dir.join("out/manifest.txt")).unwrap();
    assert!(manifest.contains("index.flip=true\n"));
    assert!(manifest.contains("index.aggregation=mean\n"));
    assert!(manifest.contains("train.loss=l2\n"));
    assert!(manifest.contains("run.input.corpus="));

    ok(dir, &["run", "--config", "run.cfg", "--flip-index", "--monthly-mean", "--loss", "l2", "--output", "again"]);
    assert_eq!(fs::read(dir.join("again").join(INDEX)).unwrap(), first);

    // the manifest alone is a complete configuration
    fs::copy(dir.join("out/manifest.txt"), dir.join("replay.cfg")).unwrap();
    ok(dir, &["run", "--config", "replay.cfg", "--output", "replay"]);
    assert_eq!(fs::read(dir.join("replay").join(INDEX)).unwrap(), first);
}

#[test]
fn tune_marks_the_best_topic_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(dir, &["prep", "--config", "run.cfg"]);
    ok(dir, &["tune", "--config", "run.cfg", "--set", "tune.topics=2,4,8"]);
    let manifest = dir.join("out/manifest-tune.txt");
    let losses: Vec<f64> = (0..3)
        .map(|i| {
            let rec = record(&manifest, &format!("run.tune.{i}"));
            assert!(rec.contains(&format!("topics={}", [2, 4, 8][i])));
            rec.rsplit("heldout_loss=").next().unwrap().parse().unwrap()
        })
        .collect();
    let selected: usize = record(&manifest, "run.tune.selected").parse().unwrap();
    let best = (0..3).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
    assert_eq!(selected, best);
    let table = fs::read_to_string(dir.join("out").join(TUNE)).unwrap();
    assert_eq!(table.lines().filter(|l| l.ends_with(",1")).count(), 1);
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(wig(dir, &["run", "--no-such-flag"]).0, 1);
    assert_eq!(wig(dir, &["train", "--loss", "huber"]).0, 1);
    assert_eq!(wig(dir, &["train", "--set", "train.topics=0"]).0, 1);

    let (code, text) = wig(dir, &["train", "--output", "empty"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("missing stage input"), "{text}");
    assert!(dir.join("empty").join("quarantine").join("manifest.txt").exists());

    // a flat reference series has no correlation
    fs::create_dir_all(dir.join("flat")).unwrap();
    let mut csv = String::from("month,value\n");
    for i in 0..30 {
        csv.push_str(&format!("{}-{:02},{}\n", 2000 + i / 12, i % 12 + 1, 100.0 + (i as f64).sin()));
    }
    fs::write(dir.join("flat").join(INDEX), &csv).unwrap();
    let mut flat = String::from("month,value\n");
    for i in 0..30 {
        flat.push_str(&format!("{}-{:02},5\n", 2000 + i / 12, i % 12 + 1));
    }
    fs::write(dir.join("ref.csv"), flat).unwrap();
    let (code, text) = wig(dir, &["eval", "--output", "flat", "--reference", "ref.csv"]);
    assert_eq!(code, 3, "{text}");
    assert_eq!(wig(dir, &["--help"]).0, 0);
}
