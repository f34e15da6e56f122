//! In-memory inverted index with BM25 scoring.
//!
//! Tokenization is deliberately plain: Unicode lowercase, split on anything
//! that is not alphanumeric, no stemming, no stopwords.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textio::Corpus;
use crate::types::{CandidateList, Passage, Query, ValidationError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("unknown docid `{0}`")]
    UnknownDocid(String),
    #[error("invalid BM25 parameters: {0}")]
    Params(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens in first-occurrence order.
pub fn distinct_terms(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(RetrievalError::Params(format!("k1 = {k1} must be ≥ 0")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::Params(format!("b = {b} must be in [0, 1]")));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Index {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doclen: f64,
    docids: Vec<String>,
    passages: Vec<Passage>,
    #[serde(skip)]
    ordinals: HashMap<String, u32>,
}

impl Index {
    pub fn build(passages: &[Passage]) -> Result<Self, RetrievalError> {
        if passages.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        let mut ordinals = HashMap::with_capacity(passages.len());
        let mut total: u64 = 0;
        for (ord, p) in passages.iter().enumerate() {
            let ord = ord as u32;
            if ordinals.insert(p.docid().to_string(), ord).is_some() {
                return Err(ValidationError::DuplicateDocid(p.docid().to_string()).into());
            }
            let tokens = tokenize(&p.full_text());
            doc_lengths.push(tokens.len() as u32);
            total += tokens.len() as u64;
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc: ord, tf });
            }
        }
        // integer total keeps the mean independent of corpus order
        let avg_doclen = total as f64 / passages.len() as f64;
        Ok(Self {
            postings,
            doc_lengths,
            avg_doclen,
            docids: passages.iter().map(|p| p.docid().to_string()).collect(),
            passages: passages.to_vec(),
            ordinals,
        })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self, RetrievalError> {
        Self::build(corpus.passages())
    }

    /// Restores the docid lookup after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.ordinals = self
            .docids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let mut idx: Index = serde_json::from_str(json)?;
        idx.rebuild_lookup();
        Ok(idx)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doclen(&self) -> f64 {
        self.avg_doclen
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn ordinal(&self, docid: &str) -> Option<u32> {
        self.ordinals.get(docid).copied()
    }

    pub fn docid(&self, ordinal: u32) -> &str {
        &self.docids[ordinal as usize]
    }

    pub fn passage(&self, docid: &str) -> Option<&Passage> {
        self.ordinal(docid).map(|o| &self.passages[o as usize])
    }

    pub fn doc_length(&self, docid: &str) -> Result<u32, RetrievalError> {
        self.ordinal(docid)
            .map(|o| self.doc_lengths[o as usize])
            .ok_or_else(|| RetrievalError::UnknownDocid(docid.to_string()))
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; zero for unseen terms.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.document_frequency(term);
        if df == 0 {
            return 0.0;
        }
        let n = self.doc_count() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    pub fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&ordinal, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    fn term_score(&self, params: &Bm25Params, term: &str, tf: u32, ordinal: u32) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let tf = tf as f64;
        let len = self.doc_lengths[ordinal as usize] as f64;
        let norm = if self.avg_doclen > 0.0 {
            1.0 - params.b + params.b * len / self.avg_doclen
        } else {
            1.0
        };
        self.idf(term) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
    }
}

/// BM25 score of one document, summed over the distinct query terms.
pub fn bm25_score(
    index: &Index,
    params: &Bm25Params,
    query_text: &str,
    docid: &str,
) -> Result<f64, RetrievalError> {
    let ord = index
        .ordinal(docid)
        .ok_or_else(|| RetrievalError::UnknownDocid(docid.to_string()))?;
    Ok(distinct_terms(query_text)
        .iter()
        .map(|t| index.term_score(params, t, index.term_frequency(t, ord), ord))
        .fold(0.0, |acc, s| acc + s))
}

/// Top-`k` documents by BM25, ties broken by ascending docid. Documents
/// scoring zero are never returned.
pub fn search(
    index: &Index,
    params: &Bm25Params,
    query: &Query,
    k: usize,
) -> Result<CandidateList, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    // accumulate per term in query order so the sums match bm25_score bit for bit
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for term in distinct_terms(query.text()) {
        for p in index.postings(&term) {
            let s = index.term_score(params, &term, p.tf, p.doc);
            *acc.entry(p.doc).or_insert(0.0) += s;
        }
    }
    let mut hits: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
    hits.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.docid(a.0).cmp(index.docid(b.0)))
    });
    hits.truncate(k);
    let ranked = hits
        .into_iter()
        .map(|(ord, s)| (index.passages[ord as usize].clone(), s));
    Ok(CandidateList::from_ranked(query.clone(), ranked)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Passage {
        Passage::new(id, text, None).unwrap()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Hello, World! x2"), ["hello", "world", "x2"]);
        assert!(tokenize("  ,, ").is_empty());
    }

    #[test]
    fn single_doc_index() {
        let idx = Index::build(&[doc("a", "Hello, world")]).unwrap();
        assert_eq!(idx.doc_lengths(), &[2]);
        assert_eq!(idx.postings("hello"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.postings("world").len(), 1);
    }

    #[test]
    fn identical_docs() {
        let idx = Index::build(&[doc("a", "x y"), doc("b", "x y")]).unwrap();
        assert_eq!(idx.doc_lengths(), &[2, 2]);
        assert_eq!(idx.postings("x").len(), 2);
        assert_eq!(idx.postings("y").len(), 2);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(Index::build(&[]), Err(RetrievalError::EmptyCorpus)));
    }

    #[test]
    fn title_precedes_text() {
        let p = Passage::new("a", "body", Some("Title".into())).unwrap();
        let idx = Index::build(&[p]).unwrap();
        assert_eq!(idx.doc_lengths(), &[2]);
        assert_eq!(idx.postings("title").len(), 1);
    }

    #[test]
    fn no_shared_terms_scores_zero() {
        let idx = Index::build(&[doc("a", "alpha beta")]).unwrap();
        assert_eq!(bm25_score(&idx, &Bm25Params::default(), "gamma", "a").unwrap(), 0.0);
    }

    #[test]
    fn single_doc_closed_form() {
        let idx = Index::build(&[doc("a", "alpha")]).unwrap();
        let s = bm25_score(&idx, &Bm25Params::default(), "alpha", "a").unwrap();
        // N = df = 1: idf = ln(0.5 / 1.5 + 1), tf part exactly 1
        let expected = (0.5f64 / 1.5 + 1.0).ln();
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!((s - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn k1_invariance_at_unit_tf_and_mean_length() {
        let idx = Index::build(&[doc("a", "alpha"), doc("b", "beta")]).unwrap();
        let s1 = bm25_score(&idx, &Bm25Params::new(0.9, 0.4).unwrap(), "alpha", "a").unwrap();
        let s2 = bm25_score(&idx, &Bm25Params::new(1.8, 0.4).unwrap(), "alpha", "a").unwrap();
        assert!((s1 - s2).abs() < 1e-15);
    }

    #[test]
    fn unknown_docid() {
        let idx = Index::build(&[doc("a", "alpha")]).unwrap();
        assert!(matches!(
            bm25_score(&idx, &Bm25Params::default(), "alpha", "zz"),
            Err(RetrievalError::UnknownDocid(_))
        ));
    }

    #[test]
    fn search_returns_only_matches() {
        let mut docs: Vec<Passage> = (0..7).map(|i| doc(&format!("n{i}"), "nothing here")).collect();
        docs.extend((0..3).map(|i| doc(&format!("m{i}"), "target word")));
        let idx = Index::build(&docs).unwrap();
        let q = Query::new("q", "target").unwrap();
        let hits = search(&idx, &Bm25Params::default(), &q, 100).unwrap();
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn ties_break_by_docid() {
        let idx = Index::build(&[doc("zeta", "same text"), doc("alpha", "same text")]).unwrap();
        let q = Query::new("q", "same").unwrap();
        let hits = search(&idx, &Bm25Params::default(), &q, 10).unwrap();
        assert_eq!(hits.docids(), ["alpha", "zeta"]);
    }

    #[test]
    fn index_json_round_trip() {
        let idx = Index::build(&[doc("a", "alpha beta"), doc("b", "beta")]).unwrap();
        let back = Index::from_json(&idx.to_json()).unwrap();
        let p = Bm25Params::default();
        assert_eq!(
            bm25_score(&idx, &p, "beta", "b").unwrap(),
            bm25_score(&back, &p, "beta", "b").unwrap()
        );
        assert_eq!(back.passage("a").unwrap().text(), "alpha beta");
    }

    #[test]
    fn bad_params() {
        assert!(Bm25Params::new(-1.0, 0.4).is_err());
        assert!(Bm25Params::new(0.9, 1.5).is_err());
    }
}
