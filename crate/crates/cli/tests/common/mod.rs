//! Seeded synthetic corpora shared by the CLI and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use permurank_core::textio::{write_jsonl_corpus, write_qrels, write_queries_tsv};
use permurank_core::{Judgments, Passage, Query};

pub struct Dataset {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub num_queries: usize,
    pub num_passages: usize,
}

fn word(i: usize) -> String {
    format!("w{i}")
}

/// Every passage mentions three topics, so every query topic matches well
/// over a hundred passages. A passage sharing the query topic is judged
/// 1 + the number of the query's two extra words it contains.
pub fn write_topic_dataset(dir: &Path, num_queries: usize, num_passages: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 2000;
    let extras: Vec<[usize; 2]> = (0..num_queries)
        .map(|_| [rng.random_range(0..vocab), rng.random_range(0..vocab)])
        .collect();
    let queries: Vec<Query> = (0..num_queries)
        .map(|q| {
            let text = format!("topic{q} {} {}", word(extras[q][0]), word(extras[q][1]));
            Query::new(format!("q{q}"), text).unwrap()
        })
        .collect();
    let topics: Vec<usize> = (0..num_queries).collect();
    let mut passages = Vec::with_capacity(num_passages);
    let mut judgments = Judgments::new();
    for p in 0..num_passages {
        let docid = format!("doc{p:05}");
        let mut words: Vec<String> = (0..rng.random_range(30..60))
            .map(|_| word(rng.random_range(0..vocab)))
            .collect();
        let chosen: Vec<usize> = topics.choose_multiple(&mut rng, 3.min(num_queries)).copied().collect();
        for &t in &chosen {
            words.push(format!("topic{t}"));
            let mut grade = 1;
            for &e in &extras[t] {
                if rng.random_bool(0.3) {
                    words.push(word(e));
                    grade += 1;
                }
            }
            judgments.insert(format!("q{t}"), docid.clone(), grade).unwrap();
        }
        words.shuffle(&mut rng);
        passages.push(Passage::new(docid, words.join(" "), None).unwrap());
    }
    let ds = Dataset {
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.tsv"),
        qrels: dir.join("qrels.txt"),
        num_queries,
        num_passages,
    };
    write_jsonl_corpus(&passages, &ds.corpus).unwrap();
    write_queries_tsv(&queries, &ds.queries).unwrap();
    write_qrels(&judgments, &ds.qrels).unwrap();
    ds
}

/// Eight passages all matching `alpha`, with d1 the most relevant.
pub fn write_eight_passage_fixture(dir: &Path) -> Dataset {
    let passages: Vec<Passage> = (1..=8)
        .map(|i| Passage::new(format!("d{i}"), format!("alpha {}", "filler ".repeat(i)), None).unwrap())
        .collect();
    let mut judgments = Judgments::new();
    for i in 1..=3 {
        judgments.insert("q1", format!("d{i}"), 4 - i).unwrap();
    }
    let ds = Dataset {
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.tsv"),
        qrels: dir.join("qrels.txt"),
        num_queries: 1,
        num_passages: 8,
    };
    write_jsonl_corpus(&passages, &ds.corpus).unwrap();
    write_queries_tsv(&[Query::new("q1", "alpha").unwrap()], &ds.queries).unwrap();
    write_qrels(&judgments, &ds.qrels).unwrap();
    ds
}

pub fn cli(args: &[&str]) -> (i32, String) {
    permurank_cli::run_captured(std::iter::once("permurank").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
