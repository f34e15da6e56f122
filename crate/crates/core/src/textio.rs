//! Reading and writing the on-disk formats: TREC run and qrels files,
//! JSONL corpora and query files, graded candidate sets and teacher
//! permutation datasets.
//!
//! All readers expect UTF-8 and strip a leading byte-order mark. Loaders
//! never reorder records: in-memory order is file order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    is_permutation_of_1_to_n, CandidateList, Judgments, Passage, Query, RankedEntry, Ranking,
    TeacherPermutation, ValidationError,
};

#[derive(Debug, Error)]
pub enum TextIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: query `{query_id}`: {message}")]
    Run {
        path: PathBuf,
        query_id: String,
        message: String,
    },
    #[error("duplicate docid `{0}` in corpus")]
    DuplicateDocid(String),
    #[error("cannot write run: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TextIoError + '_ {
    move |source| TextIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> TextIoError {
    TextIoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a whole file as UTF-8, dropping a leading BOM.
pub fn read_text(path: &Path) -> Result<String, TextIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut text = String::from_utf8(bytes).map_err(|e| TextIoError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })?;
    if text.starts_with('\u{feff}') {
        text.drain(..'\u{feff}'.len_utf8());
    }
    Ok(text)
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

// ---------------------------------------------------------------------------
// qrels

/// Reads `qid iter docid rel` lines. Later duplicates overwrite earlier ones.
pub fn read_qrels(path: &Path) -> Result<Judgments, TextIoError> {
    parse_qrels(&read_text(path)?, path)
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Judgments, TextIoError> {
    let mut judgments = Judgments::new();
    for (n, line) in numbered_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                n,
                format!("expected 4 fields `qid iter docid rel`, found {}", fields.len()),
            ));
        }
        let rel: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("relevance `{}` is not an integer", fields[3])))?;
        if rel < 0 {
            return Err(parse_err(path, n, format!("negative relevance {rel}")));
        }
        let rel = u32::try_from(rel)
            .map_err(|_| parse_err(path, n, format!("relevance {rel} out of range")))?;
        judgments
            .insert(fields[0], fields[2], rel)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    Ok(judgments)
}

pub fn write_qrels(judgments: &Judgments, path: &Path) -> Result<(), TextIoError> {
    let mut out = String::new();
    for (q, d, g) in judgments.iter() {
        let _ = writeln!(out, "{q} 0 {d} {g}");
    }
    fs::write(path, out).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// runs

/// Shortest decimal that round-trips the `f64` exactly.
pub fn format_score(score: f64) -> String {
    format!("{score:?}")
}

/// Renders rankings as TREC run lines; fails before producing any output if
/// a docid or the tag contains whitespace.
pub fn format_run(rankings: &[Ranking], tag: &str) -> Result<String, TextIoError> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(TextIoError::InvalidRun(format!(
            "tag `{tag}` must be non-empty without whitespace"
        )));
    }
    let mut out = String::new();
    for ranking in rankings {
        for (i, e) in ranking.entries().iter().enumerate() {
            if e.docid.chars().any(char::is_whitespace) {
                return Err(TextIoError::InvalidRun(format!(
                    "docid `{}` contains whitespace",
                    e.docid
                )));
            }
            let _ = writeln!(
                out,
                "{} Q0 {} {} {} {}",
                ranking.query_id(),
                e.docid,
                i + 1,
                format_score(e.score),
                tag
            );
        }
    }
    Ok(out)
}

pub fn write_run(rankings: &[Ranking], tag: &str, path: &Path) -> Result<(), TextIoError> {
    let text = format_run(rankings, tag)?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_run(path: &Path) -> Result<Vec<Ranking>, TextIoError> {
    parse_run(&read_text(path)?, path)
}

/// Parses run lines. Each query's lines must be contiguous with ranks
/// 1, 2, 3, ... and non-increasing scores.
pub fn parse_run(text: &str, path: &Path) -> Result<Vec<Ranking>, TextIoError> {
    let mut groups: Vec<(String, Vec<RankedEntry>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in numbered_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(
                path,
                n,
                format!("expected 6 fields `qid Q0 docid rank score tag`, found {}", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("rank `{}` is not a positive integer", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| parse_err(path, n, format!("score `{}` is not a number", f[4])))?;
        if score.is_nan() {
            return Err(parse_err(path, n, "NaN score"));
        }
        let slot = match index.get(f[0]) {
            Some(&i) if i == groups.len() - 1 => i,
            Some(_) => {
                return Err(TextIoError::Run {
                    path: path.to_path_buf(),
                    query_id: f[0].to_string(),
                    message: format!("lines are not contiguous (line {n})"),
                })
            }
            None => {
                index.insert(f[0].to_string(), groups.len());
                groups.push((f[0].to_string(), Vec::new()));
                groups.len() - 1
            }
        };
        let entries = &mut groups[slot].1;
        if rank != entries.len() + 1 {
            return Err(TextIoError::Run {
                path: path.to_path_buf(),
                query_id: f[0].to_string(),
                message: format!("expected rank {} at line {n}, found {rank}", entries.len() + 1),
            });
        }
        if let Some(prev) = entries.last() {
            if prev.score < score {
                return Err(TextIoError::Run {
                    path: path.to_path_buf(),
                    query_id: f[0].to_string(),
                    message: format!("score increases at rank {rank} (line {n})"),
                });
            }
        }
        entries.push(RankedEntry {
            docid: f[2].to_string(),
            score,
        });
    }
    groups
        .into_iter()
        .map(|(q, entries)| Ranking::new(q, entries).map_err(TextIoError::from))
        .collect()
}

// ---------------------------------------------------------------------------
// corpus and queries

#[derive(Debug, Deserialize)]
struct CorpusLine {
    docid: String,
    text: String,
    #[serde(default)]
    title: Option<String>,
}

/// Passages in file order, with a docid lookup table.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_docid: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, TextIoError> {
        let mut by_docid = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_docid.insert(p.docid().to_string(), i).is_some() {
                return Err(TextIoError::DuplicateDocid(p.docid().to_string()));
            }
        }
        Ok(Self { passages, by_docid })
    }

    pub fn get(&self, docid: &str) -> Option<&Passage> {
        self.by_docid.get(docid).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

pub fn load_jsonl_corpus(path: &Path) -> Result<Corpus, TextIoError> {
    let text = read_text(path)?;
    let mut passages = Vec::new();
    for (n, line) in numbered_lines(&text) {
        let rec: CorpusLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        passages.push(
            Passage::new(rec.docid, rec.text, rec.title)
                .map_err(|e| parse_err(path, n, e.to_string()))?,
        );
    }
    Corpus::from_passages(passages)
}

pub fn write_jsonl_corpus(passages: &[Passage], path: &Path) -> Result<(), TextIoError> {
    let mut out = String::new();
    for p in passages {
        out.push_str(&serde_json::to_string(p).expect("passage serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Deserialize)]
struct QueryLine {
    qid: String,
    #[serde(alias = "text")]
    query: String,
}

/// Reads queries from either TSV (`qid<TAB>text`) or JSONL
/// (`{"qid": .., "query": ..}`) lines; the two may not be mixed per line.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, TextIoError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (n, line) in numbered_lines(&text) {
        let q = if line.trim_start().starts_with('{') {
            let rec: QueryLine =
                serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
            Query::new(rec.qid, rec.query)
        } else {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(path, n, "expected `qid<TAB>text`"))?;
            Query::new(id.trim(), text.trim())
        }
        .map_err(|e| parse_err(path, n, e.to_string()))?;
        if seen.insert(q.id().to_string(), n).is_some() {
            return Err(parse_err(path, n, format!("duplicate query id `{}`", q.id())));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries_tsv(queries: &[Query], path: &Path) -> Result<(), TextIoError> {
    let mut out = String::new();
    for q in queries {
        let _ = writeln!(out, "{}\t{}", q.id(), q.text().replace(['\t', '\n'], " "));
    }
    fs::write(path, out).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// graded sets

#[derive(Debug, Serialize, Deserialize)]
pub struct GradedLine {
    pub qid: String,
    pub query: String,
    pub docid: String,
    pub text: String,
    pub rel: i64,
}

#[derive(Debug, Clone)]
pub struct GradedSet {
    pub queries: Vec<Query>,
    pub candidates: Vec<CandidateList>,
    pub judgments: Judgments,
}

/// Loads a graded candidate file (one passage per line, grades 0..=2).
/// Candidates are grouped per query in first-appearance order; candidate
/// order within a query is file order.
pub fn load_graded_set(path: &Path) -> Result<GradedSet, TextIoError> {
    let text = read_text(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Query, Vec<(Passage, f64)>)> = HashMap::new();
    let mut judgments = Judgments::new();
    for (n, line) in numbered_lines(&text) {
        let rec: GradedLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        if !(0..=2).contains(&rec.rel) {
            return Err(parse_err(path, n, format!("grade {} outside {{0,1,2}}", rec.rel)));
        }
        let passage =
            Passage::new(&rec.docid, rec.text, None).map_err(|e| parse_err(path, n, e.to_string()))?;
        let entry = match groups.get_mut(&rec.qid) {
            Some(entry) => {
                if entry.0.text() != rec.query {
                    return Err(parse_err(
                        path,
                        n,
                        format!("query text for `{}` differs from earlier lines", rec.qid),
                    ));
                }
                entry
            }
            None => {
                let q = Query::new(&rec.qid, &rec.query)
                    .map_err(|e| parse_err(path, n, e.to_string()))?;
                order.push(rec.qid.clone());
                groups.entry(rec.qid.clone()).or_insert((q, Vec::new()))
            }
        };
        if entry.1.iter().any(|(p, _)| p.docid() == rec.docid) {
            return Err(parse_err(
                path,
                n,
                format!("duplicate docid `{}` for query `{}`", rec.docid, rec.qid),
            ));
        }
        let pos = entry.1.len();
        entry.1.push((passage, -(pos as f64)));
        judgments
            .insert(&rec.qid, &rec.docid, rec.rel as u32)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    let mut queries = Vec::with_capacity(order.len());
    let mut candidates = Vec::with_capacity(order.len());
    for qid in order {
        let (q, passages) = groups.remove(&qid).expect("grouped");
        queries.push(q.clone());
        candidates.push(CandidateList::from_ranked(q, passages)?);
    }
    Ok(GradedSet {
        queries,
        candidates,
        judgments,
    })
}

// ---------------------------------------------------------------------------
// teacher datasets

/// One teacher permutation per line. `permutation` lists 1-indexed
/// positions into `docids`, most relevant first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub query_id: String,
    pub query_text: String,
    pub docids: Vec<String>,
    pub permutation: Vec<usize>,
}

impl TeacherRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.docids.len() != self.permutation.len() {
            return Err(ValidationError::LengthMismatch {
                left: self.docids.len(),
                right: self.permutation.len(),
            });
        }
        if !is_permutation_of_1_to_n(&self.permutation) {
            return Err(ValidationError::NotAPermutation(self.permutation.len()));
        }
        Ok(())
    }

    pub fn to_permutation(&self) -> Result<TeacherPermutation, ValidationError> {
        TeacherPermutation::from_order(&self.query_id, self.docids.clone(), &self.permutation)
    }

    pub fn query(&self) -> Result<Query, ValidationError> {
        Query::new(&self.query_id, &self.query_text)
    }
}

pub fn read_teacher_dataset(path: &Path) -> Result<Vec<TeacherRecord>, TextIoError> {
    let text = read_text(path)?;
    numbered_lines(&text)
        .map(|(n, line)| {
            let rec: TeacherRecord =
                serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
            rec.validate().map_err(|e| parse_err(path, n, e.to_string()))?;
            Ok(rec)
        })
        .collect()
}

pub fn format_teacher_dataset(records: &[TeacherRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_teacher_dataset(records: &[TeacherRecord], path: &Path) -> Result<(), TextIoError> {
    fs::write(path, format_teacher_dataset(records)).map_err(io_err(path))
}

/// Grade histogram of a judgment set, handy for dataset sanity checks.
pub fn grade_histogram(judgments: &Judgments) -> BTreeMap<u32, usize> {
    let mut hist = BTreeMap::new();
    for (_, _, g) in judgments.iter() {
        *hist.entry(g).or_insert(0) += 1;
    }
    hist
}
