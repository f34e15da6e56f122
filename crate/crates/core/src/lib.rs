//! Listwise passage re-ranking with large language models.
//!
//! The pipeline runs BM25 first-stage retrieval, re-ranks candidates with
//! sliding-window permutation prompts (or pointwise log-probability
//! scorers), evaluates with graded nDCG, tracks how often the model output
//! needed repair, and distills teacher permutations into a small linear
//! student.

pub mod distill;
pub mod gateway;
pub mod metrics;
pub mod prompting;
pub mod rerank;
pub mod retrieval;
pub mod textio;
pub mod types;

pub use types::{
    Candidate, CandidateList, InitialOrder, Judgments, Passage, Query, RankedEntry, Ranking,
    TeacherPermutation, ValidationError, WindowConfig,
};
