use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftscope_core::detector::display_score;
use driftscope_core::metrics::{Embedder, Occurrence, OccurrenceStore};
use tempfile::TempDir;

fn driftscope(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftscope"))
        .args(args)
        .arg("--home")
        .arg(home)
        .env_remove("DRIFTSCOPE_HOME")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(home: &Path, args: &[&str]) -> String {
    let out = driftscope(home, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_list(dir: &Path, name: &str, words: &[String]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, words.join("\n") + "\n").unwrap();
    path
}

/// Writes a scores CSV and gold lists whose evaluation at threshold 0.5
/// has the confusion counts `(tp, tn, fp, fn)`.
fn confusion_files(dir: &Path, tp: usize, tn: usize, fp: usize, fn_: usize) -> [PathBuf; 3] {
    let mut csv = String::from("word,score\n");
    let (mut changed, mut stable) = (Vec::new(), Vec::new());
    for (prefix, n, score, is_changed) in [
        ("tp", tp, 1, true),
        ("tn", tn, 0, false),
        ("fp", fp, 1, false),
        ("fn", fn_, 0, true),
    ] {
        for i in 0..n {
            let word = format!("{prefix}{i}");
            csv.push_str(&format!("{word},{score}\n"));
            if is_changed {
                changed.push(word)
            } else {
                stable.push(word)
            }
        }
    }
    let scores = dir.join("scores.csv");
    fs::write(&scores, csv).unwrap();
    [
        scores,
        write_list(dir, "changed.txt", &changed),
        write_list(dir, "stable.txt", &stable),
    ]
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evaluate_scores_file_prints_counts_and_score() {
    let dir = TempDir::new().unwrap();
    let [scores, changed, stable] = confusion_files(dir.path(), 39, 0, 2, 12);
    let args = [
        "evaluate",
        "--scores",
        path(&scores),
        "--changed",
        path(&changed),
        "--stable",
        path(&stable),
        "--metric",
        "euclidean",
        "--threshold",
        "absolute:0.5",
    ];
    let stdout = ok(dir.path(), &args);
    let row = stdout.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields[2..6], ["39", "0", "2", "12"]);
    assert_eq!(fields[6], format!("{:.2}", display_score(39.0 / 53.0)));

    let json_out = ok(dir.path(), &[&args[..], &["--json"]].concat());
    let reports: serde_json::Value = serde_json::from_str(&json_out).unwrap();
    assert_eq!(reports[0]["tp"], 39);
    assert_eq!(reports[0]["fn"], 12);
    assert_eq!(reports[0]["score"].as_f64().unwrap(), 39.0 / 53.0);
}

#[test]
fn unknown_metric_lists_valid_ones() {
    let dir = TempDir::new().unwrap();
    let [scores, changed, stable] = confusion_files(dir.path(), 1, 1, 0, 0);
    let out = driftscope(
        dir.path(),
        &[
            "evaluate",
            "--scores",
            path(&scores),
            "--changed",
            path(&changed),
            "--stable",
            path(&stable),
            "--metric",
            "hamming",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown metric `hamming`"), "{stderr}");
    for name in [
        "euclidean",
        "canberra",
        "apd-cosine",
        "jsd",
        "cluster-count",
    ] {
        assert!(stderr.contains(name), "{stderr}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["frobnicate"][..],
        &["train", "--run", "x"],
        &["report", "--run", "missing"],
        &["train", "--run", "x", "--model", "glove"],
        &["preprocess", "--synthetic", "100", "--manifest", "m.json"],
    ] {
        let out = driftscope(dir.path(), args);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
    let help = driftscope(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8(help.stdout)
        .unwrap()
        .contains("ingest-occurrences"));
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let home = dir.path().join("home");
    let h = home.as_path();
    let summary: serde_json::Value = serde_json::from_str(&ok(
        h,
        &[
            "preprocess",
            "--run",
            "demo",
            "--synthetic",
            "8000",
            "--seed",
            "4",
            "--json",
        ],
    ))
    .unwrap();
    let changed = summary["gold"][0].as_str().unwrap().to_string();
    let stable = summary["gold"][1].as_str().unwrap().to_string();
    // Same inputs again: accepted, nothing changes.
    ok(
        h,
        &[
            "preprocess",
            "--run",
            "demo",
            "--synthetic",
            "8000",
            "--seed",
            "4",
        ],
    );
    let clash = driftscope(
        h,
        &[
            "preprocess",
            "--run",
            "demo",
            "--synthetic",
            "8000",
            "--seed",
            "5",
        ],
    );
    assert_eq!(clash.status.code(), Some(1));

    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"seed": 4, "train": {"dim": 20, "epochs": 3}}"#).unwrap();
    let c = path(&config);
    ok(
        h,
        &[
            "train", "--run", "demo", "--model", "sgns-op", "--config", c,
        ],
    );
    let run_dir = home.join("runs/demo");
    let first = fs::read(run_dir.join("models/sgns-op/earlier.w2v")).unwrap();
    assert!(String::from_utf8_lossy(&first)
        .lines()
        .next()
        .unwrap()
        .ends_with(" 20"));
    ok(
        h,
        &[
            "train", "--run", "demo", "--model", "sgns-op", "--config", c,
        ],
    );
    assert_eq!(
        fs::read(run_dir.join("models/sgns-op/earlier.w2v")).unwrap(),
        first
    );

    ok(h, &["align", "--run", "demo"]);
    ok(
        h,
        &[
            "train",
            "--run",
            "demo",
            "--model",
            "sgns-wi",
            "--targets",
            &changed,
            "--targets",
            &stable,
            "--config",
            c,
        ],
    );
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["data"]["config"]["train:sgns-op"]["vector_size"], 20);
    assert_eq!(record["data"]["config"]["train:sgns-op"]["seed"], 4);

    let score = ok(
        h,
        &[
            "score",
            "--run",
            "demo",
            "--model",
            "sgns-op",
            "--metric",
            "canberra",
            "--targets",
            &changed,
            "--targets",
            &stable,
        ],
    );
    assert!(score.starts_with("# demo:sgns-op canberra"));
    let csv = fs::read_to_string(run_dir.join("rankings/sgns-op/canberra.csv")).unwrap();
    assert!(csv.starts_with("rank,word,score,changed\n"));
    assert_eq!(csv.lines().count(), 12);
    assert!(run_dir.join("rankings/sgns-op/canberra.json").is_file());

    for model in ["sgns-op", "sgns-wi"] {
        ok(
            h,
            &[
                "evaluate",
                "--run",
                "demo",
                "--model",
                model,
                "--metric",
                "euclidean,cosine",
                "--changed",
                &changed,
                "--stable",
                &stable,
            ],
        );
    }
    let report = ok(h, &["report", "--run", "demo"]);
    assert_eq!(report.lines().count(), 5);
    let json1 = ok(h, &["report", "--run", "demo", "--json"]);
    let saved1 = fs::read(run_dir.join("report.json")).unwrap();
    let csv1 = fs::read(run_dir.join("report.csv")).unwrap();
    assert_eq!(ok(h, &["report", "--run", "demo"]), report);
    assert_eq!(ok(h, &["report", "--run", "demo", "--json"]), json1);
    assert_eq!(fs::read(run_dir.join("report.json")).unwrap(), saved1);
    assert_eq!(fs::read(run_dir.join("report.csv")).unwrap(), csv1);
    let parsed: serde_json::Value = serde_json::from_str(&json1).unwrap();
    assert_eq!(parsed["rows"].as_array().unwrap().len(), 4);

    let out_csv = dir.path().join("points.csv");
    let projection: serde_json::Value = serde_json::from_str(&ok(
        h,
        &[
            "project",
            "--run",
            "demo",
            "--model",
            "sgns-wi",
            "--words",
            "leaf,lift,water",
            "--perplexity",
            "1",
            "--out",
            path(&out_csv),
            "--json",
        ],
    ))
    .unwrap();
    assert_eq!(projection["links"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(&out_csv).unwrap().lines().count(), 7);
    assert_eq!(
        fs::read_dir(run_dir.join("projections/sgns-wi"))
            .unwrap()
            .count(),
        1
    );
}

#[test]
fn contextual_occurrences_are_ingested_and_scored() {
    let dir = TempDir::new().unwrap();
    let h = dir.path();
    ok(h, &["preprocess", "--run", "ctx", "--synthetic", "500"]);
    let mut store = OccurrenceStore::new(2).with_periods("pre1900", "post1900");
    let mut add = |word: &str, period: &str, points: &[[f64; 2]]| {
        for (i, p) in points.iter().enumerate() {
            for embedder in [Embedder::Prev, Embedder::Post] {
                store.insert(
                    word,
                    embedder,
                    period,
                    Occurrence {
                        sentence_id: format!("{word}-{period}-{i}"),
                        vector: p.to_vec(),
                    },
                );
            }
        }
    };
    add("leaf", "pre1900", &[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]);
    add("leaf", "post1900", &[[5.0, 5.0], [5.1, 5.0], [5.0, 5.1]]);
    add("stone", "pre1900", &[[1.0, 1.0], [1.1, 1.0], [1.0, 1.1]]);
    add("stone", "post1900", &[[1.0, 1.05], [1.05, 1.0], [1.1, 1.1]]);
    let file = dir.path().join("occ.jsonl");
    store.write(fs::File::create(&file).unwrap()).unwrap();
    ok(
        h,
        &["ingest-occurrences", "--run", "ctx", "--file", path(&file)],
    );
    let targets = write_list(dir.path(), "t.txt", &["leaf".into(), "stone".into()]);
    for model in ["elmo-prev", "elmo-post"] {
        let out = ok(
            h,
            &[
                "score",
                "--run",
                "ctx",
                "--model",
                model,
                "--metric",
                "apd-euclidean",
                "--targets",
                path(&targets),
            ],
        );
        let first = out.lines().nth(1).unwrap();
        assert!(first.contains("leaf"), "{out}");
    }
    let out = driftscope(
        h,
        &[
            "score",
            "--run",
            "ctx",
            "--model",
            "elmo-prev",
            "--metric",
            "cosine",
            "--targets",
            path(&targets),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid metrics: apd-euclidean"));

    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"format\": \"driftscope-occurrences\", \"version\": 1, \"dim\": 2}\n{\"word\": 3}\n",
    )
    .unwrap();
    let out = driftscope(
        h,
        &["ingest-occurrences", "--run", "ctx", "--file", path(&bad)],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_artifact_is_an_internal_error() {
    let dir = TempDir::new().unwrap();
    let h = dir.path();
    ok(h, &["preprocess", "--run", "c", "--synthetic", "2000"]);
    ok(
        h,
        &[
            "train", "--run", "c", "--model", "sgns-op", "--dim", "8", "--epochs", "1",
        ],
    );
    ok(h, &["align", "--run", "c"]);
    let aligned = h.join("runs/c/models/sgns-op/aligned/later.w2v");
    let text = fs::read_to_string(&aligned).unwrap();
    fs::write(&aligned, &text[..text.len() / 2]).unwrap();
    let targets = write_list(h, "t.txt", &["leaf".into()]);
    let out = driftscope(
        h,
        &[
            "score",
            "--run",
            "c",
            "--model",
            "sgns-op",
            "--metric",
            "cosine",
            "--targets",
            path(&targets),
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt artifact"));
}
