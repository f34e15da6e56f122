mod common;

use std::path::{Path, PathBuf};

use permurank_core::textio::{read_run, read_teacher_dataset};

use common::{cli, s};

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    ds: common::Dataset,
    run: PathBuf,
}

impl Pipeline {
    fn new(queries: usize, passages: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let ds = common::write_topic_dataset(&root, queries, passages, 1);
        let idx = root.join("idx.json");
        let run = root.join("bm25.txt");
        assert_eq!(cli(&["index", "--corpus", s(&ds.corpus), "--out", s(&idx)]).0, 0);
        let (code, _) = cli(&["retrieve", "--index", s(&idx), "--queries", s(&ds.queries), "--k", "30", "--out", s(&run)]);
        assert_eq!(code, 0);
        Self { _dir: dir, root, ds, run }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn rerank(&self, out: &Path, extra: &[&str]) -> (i32, String) {
        let mut args = vec![
            "rerank", "--run", s(&self.run), "--corpus", s(&self.ds.corpus), "--queries", s(&self.ds.queries),
            "--out", s(out),
        ];
        args.extend_from_slice(extra);
        cli(&args)
    }
}

#[test]
fn help_lists_defaults() {
    let (code, help) = cli(&["rerank", "--help"]);
    assert_eq!(code, 0);
    for needle in [
        "[default: pg-chat]",
        "[default: 20]",
        "[default: half of --window]",
        "[default: 1]",
        "[default: as-retrieved]",
        "[default: 0]",
        "[default: https://api.openai.com]",
        "[default: gpt-3.5-turbo]",
        "[default: 3]",
        "[default: 120]",
        "[default: 4]",
        "[default: 0.9]",
        "[default: 0.4]",
        "[default: off]",
    ] {
        assert!(help.contains(needle), "missing {needle} in\n{help}");
    }
    let (code, help) = cli(&["gradcheck", "--help"]);
    assert_eq!(code, 0);
    assert!(help.contains("[default: 2,5,20]") && help.contains("[default: 0.001]"));
}

#[test]
fn ideal_run_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::write_eight_passage_fixture(dir.path());
    let run = dir.path().join("ideal.txt");
    std::fs::write(&run, "q1 Q0 d1 1 3 ideal\nq1 Q0 d2 2 2 ideal\nq1 Q0 d3 3 1 ideal\n").unwrap();
    let (code, table) = cli(&["eval", "--run", s(&run), "--qrels", s(&ds.qrels)]);
    assert_eq!(code, 0);
    assert!(table.contains("nDCG@10  1.0000"), "{table}");
    assert!(table.contains("nDCG@1   1.0000"), "{table}");
}

#[test]
fn mock_rerank_beats_bm25() {
    let p = Pipeline::new(20, 600);
    let out = p.path("rr.txt");
    let (code, summary) = p.rerank(&out, &["--mock-oracle", s(&p.ds.qrels)]);
    assert_eq!(code, 0);
    assert!(summary.starts_with("reranked 20 queries with pg-chat"), "{summary}");
    let ndcg = |run: &Path| -> f64 {
        let (_, json) = cli(&["eval", "--run", s(run), "--qrels", s(&p.ds.qrels), "--json"]);
        serde_json::from_str::<serde_json::Value>(&json).unwrap()["averages"]["nDCG@10"].as_f64().unwrap()
    };
    assert!(ndcg(&out) >= ndcg(&p.run));
    assert_eq!(read_run(&out).unwrap().len(), 20);
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let p = Pipeline::new(3, 100);
    let out = p.path("rr.txt");
    let trace = p.path("t.jsonl");
    let cases: [&[&str]; 5] = [
        &["--mock-oracle", s(&p.ds.qrels), "--endpoint", "http://localhost:1"],
        &["--drop-rate", "0.1"],
        &["--mock-oracle", s(&p.ds.qrels), "--drop-rate", "1.5"],
        &["--mock-oracle", s(&p.ds.qrels), "--window", "4", "--step", "5"],
        &["--mock-oracle", s(&p.ds.qrels), "--method", "qg", "--trace", s(&trace)],
    ];
    for extra in cases {
        let (code, _) = p.rerank(&out, extra);
        assert_eq!(code, 1, "{extra:?}");
        assert!(!out.exists(), "{extra:?} left an output behind");
    }
    // output colliding with another output
    let (code, _) = p.rerank(&out, &["--mock-oracle", s(&p.ds.qrels), "--trace", s(&out)]);
    assert_eq!(code, 1);
}

#[test]
fn unreachable_endpoint_exits_3_without_output() {
    let p = Pipeline::new(2, 100);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = p.path("rr.txt");
    let endpoint = format!("http://127.0.0.1:{port}");
    let (code, _) = p.rerank(&out, &["--endpoint", &endpoint, "--max-retries", "0", "--timeout-secs", "5"]);
    assert_eq!(code, 3);
    assert!(!out.exists());
}

#[test]
fn missing_inputs_are_data_errors() {
    let p = Pipeline::new(2, 50);
    let out = p.path("rr.txt");
    let (code, _) = p.rerank(&out, &["--mock-oracle", s(&p.path("nope.qrels"))]);
    assert_eq!(code, 2);
    assert!(!out.exists());
    let (code, _) = cli(&["eval", "--run", s(&p.path("nope.txt")), "--qrels", s(&p.ds.qrels)]);
    assert_eq!(code, 2);
    let (code, _) = cli(&["index", "--corpus", s(&p.path("nope.jsonl")), "--out", s(&p.path("i.json"))]);
    assert_eq!(code, 2);
}

#[test]
fn rerank_is_byte_reproducible() {
    let p = Pipeline::new(8, 300);
    let flags = ["--mock-oracle", s(&p.ds.qrels), "--drop-rate", "0.1", "--duplicate-rate", "0.1",
        "--initial-order", "random", "--seed", "5", "--window", "6", "--step", "3"];
    let (a, b) = (p.path("a.txt"), p.path("b.txt"));
    let (ta, tb) = (p.path("a.jsonl"), p.path("b.jsonl"));
    let mut fa: Vec<&str> = flags.to_vec();
    fa.extend(["--trace", s(&ta), "--jobs", "1"]);
    let mut fb: Vec<&str> = flags.to_vec();
    fb.extend(["--trace", s(&tb), "--jobs", "8"]);
    assert_eq!(p.rerank(&a, &fa).0, 0);
    assert_eq!(p.rerank(&b, &fb).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
}

#[test]
fn stability_report_counts_faults() {
    let p = Pipeline::new(6, 200);
    let trace = p.path("t.jsonl");
    let flags = ["--mock-oracle", s(&p.ds.qrels), "--reject-rate", "0.5", "--trace", s(&trace), "--window", "10"];
    assert_eq!(p.rerank(&p.path("rr.txt"), &flags).0, 0);
    let (code, json) = cli(&["stability", "--trace", s(&trace), "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["rejection"].as_u64().unwrap() > 0);
    assert_eq!(v["windows"].as_u64().unwrap() as usize, std::fs::read_to_string(&trace).unwrap().lines().count());
    let (code, table) = cli(&["stability", "--trace", s(&trace)]);
    assert_eq!(code, 0);
    assert!(table.contains("rejection"));
}

#[test]
fn teacher_distill_student_roundtrip() {
    let p = Pipeline::new(12, 400);
    let teacher = p.path("teacher.jsonl");
    let flags = ["--mock-oracle", s(&p.ds.qrels), "--top-k-only", "10", "--teacher-out", s(&teacher)];
    assert_eq!(p.rerank(&p.path("rr.txt"), &flags).0, 0);
    let records = read_teacher_dataset(&teacher).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(|r| r.docids.len() == 10));

    let student = p.path("student.json");
    let (code, log) = cli(&[
        "distill", "--teacher", s(&teacher), "--corpus", s(&p.ds.corpus), "--epochs", "5", "--out", s(&student),
    ]);
    assert_eq!(code, 0);
    assert!(log.starts_with("initial loss"));
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 5);

    let out = p.path("student_run.txt");
    let (code, summary) = p.rerank(&out, &["--method", "student", "--student", s(&student), "--top-k-only", "10"]);
    assert_eq!(code, 0, "{summary}");
    let runs = read_run(&out).unwrap();
    let original = read_run(&p.run).unwrap();
    for (a, b) in runs.iter().zip(&original) {
        // the student re-orders the head only, and keeps every candidate
        assert_eq!(a.len(), b.len());
        let tail_a: Vec<&str> = a.docids().skip(10).collect();
        let tail_b: Vec<&str> = b.docids().skip(10).collect();
        assert_eq!(tail_a, tail_b);
    }
}

#[test]
fn gradcheck_reports_every_loss() {
    let (code, out) = cli(&["gradcheck", "--instances", "10"]);
    assert_eq!(code, 0, "{out}");
    for name in ["ranknet", "listwise-ce", "lambda", "bce"] {
        assert!(out.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{out}");
    }
    let (code, _) = cli(&["gradcheck", "--epsilon", "0.01"]);
    assert_eq!(code, 1);
}
