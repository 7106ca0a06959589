mod common;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use cqa_detect::classifier::Model;
use cqa_detect::corpus::load_corpus;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cqa-detect"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn small_corpus(&self, name: &str, seed: u64) -> PathBuf {
        let path = self.path(name);
        let s = seed.to_string();
        ok(&["gen", "--seed", &s, "--total", "600", "--campaign", "250", "--users", "300", "--posters", "20", "--out", p(&path)]);
        path
    }
}

const QUICK: [&str; 2] = ["--max-iters", "300"];

#[test]
fn gen_is_deterministic_and_honors_counts() {
    let a = ok(&["gen", "--seed", "3", "--total", "300", "--campaign", "120", "--users", "200", "--posters", "10"]);
    let b = ok(&["gen", "--seed", "3", "--total", "300", "--campaign", "120", "--users", "200", "--posters", "10"]);
    let c = ok(&["gen", "--seed", "4", "--total", "300", "--campaign", "120", "--users", "200", "--posters", "10"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let corpus = cqa_detect::corpus::read_corpus(a.as_bytes()).unwrap();
    assert_eq!(corpus.len(), 300);
    assert_eq!(corpus.iter().filter(|s| s.label.unwrap().is_campaign()).count(), 120);
}

#[test]
fn standard_corpus_replays_into_24_iterations() {
    let w = Work::new();
    let corpus = w.path("standard.txt");
    ok(&["gen", "--seed", "7", "--out", p(&corpus)]);
    let sessions = load_corpus(&corpus).unwrap();
    assert_eq!(sessions.len(), 4998);
    assert_eq!(sessions.iter().filter(|s| s.label.unwrap().is_campaign()).count(), 2147);

    let report = ok(&["replay", "--corpus", p(&corpus), "--fixed", "--max-iters", "50"]);
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows[23].starts_with("23,1,200,198,"), "{}", rows[23]);
}

#[test]
fn train_then_score_matches_library() {
    let w = Work::new();
    let corpus = w.small_corpus("c.txt", 11);
    let model_path = w.path("model.txt");
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&model_path)];
    args.extend(QUICK);
    ok(&args);
    ok(&args);
    let model = Model::load(&model_path).unwrap();
    assert_eq!(model.version, 1);
    assert_eq!(model.trained_count, 600);

    let fresh = w.small_corpus("fresh.txt", 12);
    let out = ok(&["score", "--model", p(&model_path), "--corpus", p(&corpus), "--input", p(&fresh)]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("url,score,label,sgqid,sgaid,sgtext"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 600);
    let db = load_corpus(&corpus).unwrap();
    let state = cqa_detect::textstats::CountState::rebuild(&db);
    for (row, s) in rows.iter().zip(load_corpus(&fresh).unwrap()) {
        let fv = cqa_detect::adaptive::score_features(&s, &state, &model);
        let v = model.classify(&fv);
        assert_eq!(row[0], s.url);
        assert_eq!(row[1].parse::<f64>().unwrap(), v.score);
        assert_eq!(row[2], v.label.as_u8().to_string());
    }
}

#[test]
fn replay_modes() {
    let w = Work::new();
    let corpus = w.small_corpus("c.txt", 21);
    let mut fixed = vec!["replay", "--corpus", p(&corpus), "--fixed"];
    fixed.extend(QUICK);
    let report = ok(&fixed);
    assert_eq!(report, ok(&fixed));
    let thetas: Vec<String> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(4).take(4).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(thetas.len(), 2);
    assert!(thetas.iter().all(|t| *t == thetas[0]));

    let out = w.path("adaptive.csv");
    let mut adaptive = vec!["replay", "--corpus", p(&corpus), "--out", p(&out), "--batch-size", "100"];
    adaptive.extend(QUICK);
    ok(&adaptive);
    let text = std::fs::read_to_string(&out).unwrap();
    let sizes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(sizes, ["200", "300", "400", "500"]);
}

#[test]
fn diag_reports_each_signal() {
    let w = Work::new();
    let corpus = w.small_corpus("c.txt", 31);
    let summary = w.path("summary.csv");
    let cdf = ok(&["diag", "--corpus", p(&corpus), "--summary", p(&summary)]);
    assert!(cdf.starts_with("feature,class,value,cdf\n"));
    let summary = std::fs::read_to_string(&summary).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "feature,ks,verdict");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        let ks: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&ks));
    }
}

#[test]
fn export_report_writes_tables() {
    let w = Work::new();
    let corpus = w.small_corpus("c.txt", 41);
    let out = w.path("report");
    let mut args = vec!["export-report", "--corpus", p(&corpus), "--out-dir", p(&out), "--train-size", "400"];
    args.extend(QUICK);
    ok(&args);
    let roc = std::fs::read_to_string(out.join("roc.csv")).unwrap();
    let thresholds: Vec<&str> = roc.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(thresholds, ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"]);
    for name in ["adaptive.csv", "fixed.csv"] {
        let t = std::fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(t.lines().count(), 1 + 2, "{name}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["gen", "--total", "10", "--campaign", "11"]).status.code(), Some(1));
    assert_eq!(run(&["replay", "--corpus", "x", "--batch-size", "0"]).status.code(), Some(1));

    let w = Work::new();
    let missing = w.path("nope.txt");
    assert_eq!(run(&["replay", "--corpus", p(&missing)]).status.code(), Some(2));
    let garbage = w.path("garbage.txt");
    std::fs::write(&garbage, "not a session\n").unwrap();
    assert_eq!(run(&["train", "--corpus", p(&garbage), "--out", p(&w.path("m"))]).status.code(), Some(2));
    let corpus = w.small_corpus("c.txt", 51);
    let out = run(&["score", "--model", p(&missing), "--corpus", p(&corpus), "--input", p(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn serve_answers_until_interrupted() {
    let w = Work::new();
    let seed = w.path("seed.txt");
    cqa_detect::corpus::write_corpus(&seed, &common::corpus_tea_shop()).unwrap();
    let config = w.path("server.conf");
    std::fs::write(&config, "tokens = tokens.txt\nstore_dir = store\nseed_corpus = seed.txt\n").unwrap();
    std::fs::write(w.path("tokens.txt"), "admin-token=admin\n").unwrap();

    let mut child = bin()
        .args(["serve", "--listen", "127.0.0.1:0", "--config", p(&config)])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited before listening").unwrap();
        if let Some((_, a)) = line.split_once("listening on ") {
            break a.trim().to_string();
        }
    };
    let (status, body) = common::Http::new().get(&format!("http://{addr}/health"));
    assert_eq!(status, 200);
    assert_eq!(body, r#"{"status":"ok","model_version":1,"sessions":14,"labeled":14,"pending_labels":0}"#);

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    assert_eq!(child.wait().unwrap().code(), Some(0));
    assert!(w.path("store").join(cqa_detect::store::SNAPSHOT_FILE).exists());
}
