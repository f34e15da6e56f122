//! Lexical features for the linear student.

use crate::retrieval::{bm25_score, distinct_terms, Bm25Params, Index, RetrievalError};
use crate::types::Passage;

pub const FEATURE_NAMES: [&str; 6] = [
    "bm25",
    "term_overlap",
    "idf_overlap",
    "query_coverage",
    "log_length",
    "bias",
];
pub const NUM_FEATURES: usize = FEATURE_NAMES.len();
pub const BIAS: usize = NUM_FEATURES - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

/// Features of `passage` for `query_text`; the passage must be in `index`.
pub fn extract_features(
    query_text: &str,
    passage: &Passage,
    index: &Index,
    params: &Bm25Params,
) -> Result<FeatureVector, RetrievalError> {
    let docid = passage.docid();
    let ord = index
        .ordinal(docid)
        .ok_or_else(|| RetrievalError::UnknownDocid(docid.to_string()))?;
    let terms = distinct_terms(query_text);
    let mut overlap = 0usize;
    let mut idf_overlap = 0.0;
    for t in &terms {
        if index.term_frequency(t, ord) > 0 {
            overlap += 1;
            idf_overlap += index.idf(t);
        }
    }
    let coverage = if terms.is_empty() {
        0.0
    } else {
        overlap as f64 / terms.len() as f64
    };
    Ok(FeatureVector([
        bm25_score(index, params, query_text, docid)?,
        overlap as f64,
        idf_overlap,
        coverage,
        (index.doc_length(docid)? as f64).ln_1p(),
        1.0,
    ]))
}
