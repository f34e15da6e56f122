//! Domain types shared across the pipeline.
//!
//! Everything here is immutable after construction. Ranks are 1-indexed at
//! every public boundary; scores are `f64` and NaN is rejected on the way in.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("{what} `{value}` must not contain whitespace")]
    Whitespace { what: &'static str, value: String },
    #[error("NaN score for `{docid}`")]
    NanScore { docid: String },
    #[error("duplicate docid `{0}`")]
    DuplicateDocid(String),
    #[error("initial ranks must be exactly 1..{expected_len} in order; found rank {found} at position {position}")]
    BadInitialRank {
        expected_len: usize,
        position: usize,
        found: u32,
    },
    #[error("ranks are not a permutation of 1..{0}")]
    NotAPermutation(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("entries are not sorted by descending score at position {0}")]
    Unsorted(usize),
    #[error("invalid window config: {0}")]
    Window(String),
    #[error("relevance grade {0} outside 0..=3")]
    Grade(u32),
}

fn check_token(what: &'static str, value: &str) -> Result<(), ValidationError> {
    if value.is_empty() {
        return Err(ValidationError::Empty { what });
    }
    if value.chars().any(char::is_whitespace) {
        return Err(ValidationError::Whitespace {
            what,
            value: value.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    id: String,
    text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ValidationError> {
        let (id, text) = (id.into(), text.into());
        check_token("query id", &id)?;
        if text.trim().is_empty() {
            return Err(ValidationError::Empty { what: "query text" });
        }
        Ok(Self { id, text })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    docid: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
}

impl Passage {
    pub fn new(
        docid: impl Into<String>,
        text: impl Into<String>,
        title: Option<String>,
    ) -> Result<Self, ValidationError> {
        let docid = docid.into();
        check_token("docid", &docid)?;
        Ok(Self {
            docid,
            text: text.into(),
            title: title.filter(|t| !t.trim().is_empty()),
        })
    }

    pub fn docid(&self) -> &str {
        &self.docid
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_deref()
    }

    /// Title (if any) followed by the body, separated by a single space.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(t) => format!("{} {}", t, self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub passage: Passage,
    pub initial_rank: u32,
    pub initial_score: f64,
}

/// A query and its first-stage candidates, in initial-rank order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateList {
    query: Query,
    candidates: Vec<Candidate>,
}

impl CandidateList {
    /// Builds a list whose candidates must already be in order 1..M.
    pub fn new(query: Query, candidates: Vec<Candidate>) -> Result<Self, ValidationError> {
        let mut seen = HashSet::with_capacity(candidates.len());
        for (pos, c) in candidates.iter().enumerate() {
            if c.initial_rank as usize != pos + 1 {
                return Err(ValidationError::BadInitialRank {
                    expected_len: candidates.len(),
                    position: pos + 1,
                    found: c.initial_rank,
                });
            }
            if c.initial_score.is_nan() {
                return Err(ValidationError::NanScore {
                    docid: c.passage.docid().to_string(),
                });
            }
            if !seen.insert(c.passage.docid()) {
                return Err(ValidationError::DuplicateDocid(c.passage.docid().to_string()));
            }
        }
        Ok(Self { query, candidates })
    }

    /// Sorts by `initial_rank` first, then validates.
    pub fn from_unordered(
        query: Query,
        mut candidates: Vec<Candidate>,
    ) -> Result<Self, ValidationError> {
        candidates.sort_by_key(|c| c.initial_rank);
        Self::new(query, candidates)
    }

    /// Assigns ranks 1..M to passages in the given order.
    pub fn from_ranked(
        query: Query,
        ranked: impl IntoIterator<Item = (Passage, f64)>,
    ) -> Result<Self, ValidationError> {
        let candidates = ranked
            .into_iter()
            .enumerate()
            .map(|(i, (passage, score))| Candidate {
                passage,
                initial_rank: i as u32 + 1,
                initial_score: score,
            })
            .collect();
        Self::new(query, candidates)
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn docids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.passage.docid()).collect()
    }

    /// First `k` candidates as a new list (ranks are unchanged since they are a prefix).
    pub fn head(&self, k: usize) -> CandidateList {
        CandidateList {
            query: self.query.clone(),
            candidates: self.candidates[..k.min(self.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitialOrder {
    #[default]
    AsRetrieved,
    Random(u64),
    Reversed,
}

/// Sliding-window geometry plus pass count and the order candidates start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    window: usize,
    step: usize,
    passes: usize,
    initial_order: InitialOrder,
}

pub const MAX_WINDOW: usize = 1000;

impl WindowConfig {
    pub fn new(
        window: usize,
        step: usize,
        passes: usize,
        initial_order: InitialOrder,
    ) -> Result<Self, ValidationError> {
        if window == 0 || window > MAX_WINDOW {
            return Err(ValidationError::Window(format!(
                "window {window} must be in 1..={MAX_WINDOW}"
            )));
        }
        if step == 0 || step > window {
            return Err(ValidationError::Window(format!(
                "step {step} must be in 1..={window}"
            )));
        }
        if passes == 0 {
            return Err(ValidationError::Window("passes must be ≥ 1".into()));
        }
        Ok(Self {
            window,
            step,
            passes,
            initial_order,
        })
    }

    /// Step defaults to half the window (at least 1).
    pub fn with_window(window: usize) -> Result<Self, ValidationError> {
        Self::new(window, (window / 2).max(1), 1, InitialOrder::AsRetrieved)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn initial_order(&self) -> InitialOrder {
        self.initial_order
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 20,
            step: 10,
            passes: 1,
            initial_order: InitialOrder::AsRetrieved,
        }
    }
}

/// Teacher rank labels `r_1..r_M`, aligned with the original candidate order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherPermutation {
    query_id: String,
    docids: Vec<String>,
    ranks: Vec<usize>,
}

pub(crate) fn is_permutation_of_1_to_n(values: &[usize]) -> bool {
    let mut seen = vec![false; values.len()];
    values.iter().all(|&v| {
        if v == 0 || v > values.len() || seen[v - 1] {
            false
        } else {
            seen[v - 1] = true;
            true
        }
    })
}

impl TeacherPermutation {
    pub fn new(
        query_id: impl Into<String>,
        docids: Vec<String>,
        ranks: Vec<usize>,
    ) -> Result<Self, ValidationError> {
        if docids.len() != ranks.len() {
            return Err(ValidationError::LengthMismatch {
                left: docids.len(),
                right: ranks.len(),
            });
        }
        if !is_permutation_of_1_to_n(&ranks) {
            return Err(ValidationError::NotAPermutation(ranks.len()));
        }
        Ok(Self {
            query_id: query_id.into(),
            docids,
            ranks,
        })
    }

    /// From a ranked list of 1-indexed identifiers into `docids`
    /// (`order[0]` is the identifier of the top passage).
    pub fn from_order(
        query_id: impl Into<String>,
        docids: Vec<String>,
        order: &[usize],
    ) -> Result<Self, ValidationError> {
        if docids.len() != order.len() {
            return Err(ValidationError::LengthMismatch {
                left: docids.len(),
                right: order.len(),
            });
        }
        if !is_permutation_of_1_to_n(order) {
            return Err(ValidationError::NotAPermutation(order.len()));
        }
        let mut ranks = vec![0; order.len()];
        for (pos, &ident) in order.iter().enumerate() {
            ranks[ident - 1] = pos + 1;
        }
        Self::new(query_id, docids, ranks)
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn docids(&self) -> &[String] {
        &self.docids
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Inverse of [`TeacherPermutation::from_order`].
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.ranks.len()];
        for (i, &r) in self.ranks.iter().enumerate() {
            order[r - 1] = i + 1;
        }
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub docid: String,
    pub score: f64,
}

/// A scored ranking for one query; entries sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    query_id: String,
    entries: Vec<RankedEntry>,
}

impl Ranking {
    /// Validates an already-sorted entry list.
    pub fn new(
        query_id: impl Into<String>,
        entries: Vec<RankedEntry>,
    ) -> Result<Self, ValidationError> {
        let query_id = query_id.into();
        check_token("query id", &query_id)?;
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            check_token("docid", &e.docid)?;
            if e.score.is_nan() {
                return Err(ValidationError::NanScore {
                    docid: e.docid.clone(),
                });
            }
            if !seen.insert(e.docid.as_str()) {
                return Err(ValidationError::DuplicateDocid(e.docid.clone()));
            }
            if i > 0 && entries[i - 1].score < e.score {
                return Err(ValidationError::Unsorted(i + 1));
            }
        }
        Ok(Self { query_id, entries })
    }

    /// Sorts `(docid, score)` pairs by descending score; the input order is
    /// the tie-break (pass candidates in initial-rank order).
    pub fn from_scores(
        query_id: impl Into<String>,
        scored: Vec<(String, f64)>,
    ) -> Result<Self, ValidationError> {
        if let Some((docid, _)) = scored.iter().find(|(_, s)| s.is_nan()) {
            return Err(ValidationError::NanScore {
                docid: docid.clone(),
            });
        }
        let mut entries: Vec<RankedEntry> = scored
            .into_iter()
            .map(|(docid, score)| RankedEntry { docid, score })
            .collect();
        // stable sort keeps the incoming order for equal scores
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Self::new(query_id, entries)
    }

    /// Scores `M, M-1, ..., 1` by position.
    pub fn from_order(
        query_id: impl Into<String>,
        docids: impl IntoIterator<Item = String>,
    ) -> Result<Self, ValidationError> {
        let docids: Vec<String> = docids.into_iter().collect();
        let m = docids.len();
        let entries = docids
            .into_iter()
            .enumerate()
            .map(|(i, docid)| RankedEntry {
                docid,
                score: (m - i) as f64,
            })
            .collect();
        Self::new(query_id, entries)
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.docid.as_str())
    }
}

pub const MAX_GRADE: u32 = 3;

/// Graded relevance judgments keyed by query id, then docid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites a grade.
    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        docid: impl Into<String>,
        grade: u32,
    ) -> Result<(), ValidationError> {
        if grade > MAX_GRADE {
            return Err(ValidationError::Grade(grade));
        }
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(docid.into(), grade);
        Ok(())
    }

    /// Grade for a pair; unjudged pairs are 0.
    pub fn grade(&self, query_id: &str, docid: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(docid))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.grades.contains_key(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.grades.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, g)| (q.as_str(), d.as_str(), *g))
        })
    }
}
