use std::path::Path;

use proptest::prelude::*;

use permurank_core::textio::{
    format_run, format_teacher_dataset, load_jsonl_corpus, load_queries, parse_qrels, parse_run,
    read_teacher_dataset, write_jsonl_corpus, write_qrels, write_queries_tsv, read_qrels, TeacherRecord,
};
use permurank_core::{Judgments, Passage, Query, Ranking};

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.-]{1,12}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn run_roundtrip_is_exact(
        scores in prop::collection::vec(-1e6f64..1e6, 1..30),
        qid in token(),
    ) {
        let scored: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("d{i}"), s)).collect();
        let ranking = Ranking::from_scores(qid, scored).unwrap();
        let text = format_run(std::slice::from_ref(&ranking), "tag").unwrap();
        let back = parse_run(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(back[0].entries(), ranking.entries());
        prop_assert_eq!(format_run(&back, "tag").unwrap(), text);
    }

    #[test]
    fn qrels_roundtrip(grades in prop::collection::btree_map((0u8..5, 0u16..50), 0u32..=3, 1..60)) {
        let mut j = Judgments::new();
        for ((q, d), g) in &grades {
            j.insert(format!("q{q}"), format!("d{d}"), *g).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        write_qrels(&j, &path).unwrap();
        let back = read_qrels(&path).unwrap();
        prop_assert_eq!(back, j);
    }

    #[test]
    fn passages_survive_jsonl(texts in prop::collection::vec("\\PC{0,40}", 1..10)) {
        let passages: Vec<Passage> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| Passage::new(format!("p{i}"), t.clone(), (i % 2 == 0).then(|| "Title \"x\"".to_string())).unwrap())
            .collect();
        prop_assume!(!passages.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_jsonl_corpus(&passages, &path).unwrap();
        let corpus = load_jsonl_corpus(&path).unwrap();
        prop_assert_eq!(corpus.passages(), &passages[..]);
    }
}

#[test]
fn queries_roundtrip_through_tsv() {
    let queries = vec![
        Query::new("1", "what is rust").unwrap(),
        Query::new("q-2", "ünïcödé query, with punctuation?").unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.tsv");
    write_queries_tsv(&queries, &path).unwrap();
    assert_eq!(load_queries(&path).unwrap(), queries);
}

#[test]
fn teacher_dataset_roundtrip() {
    let records = vec![
        TeacherRecord {
            query_id: "q1".into(),
            query_text: "a b".into(),
            docids: vec!["x".into(), "y".into(), "z".into()],
            permutation: vec![3, 1, 2],
        },
        TeacherRecord {
            query_id: "q2".into(),
            query_text: "c".into(),
            docids: vec!["u".into()],
            permutation: vec![1],
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, format_teacher_dataset(&records)).unwrap();
    assert_eq!(read_teacher_dataset(&path).unwrap(), records);
}

#[test]
fn malformed_inputs_are_rejected() {
    let p = Path::new("mem");
    assert!(parse_qrels("q1 0 d1\n", p).is_err());
    assert!(parse_qrels("q1 0 d1 x\n", p).is_err());
    assert!(parse_run("q1 Q0 d1 2 1.0 t\n", p).is_err());
    assert!(parse_run("q1 Q0 d1 1 1.0 t\nq1 Q0 d2 2 2.0 t\n", p).is_err());
    assert!(parse_run("q1 Q0 d1 1 1.0 t\nq1 Q0 d1 2 0.5 t\n", p).is_err());
}
