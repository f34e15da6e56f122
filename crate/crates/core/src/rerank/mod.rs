//! Re-ranking: permutation parsing and repair, the sliding-window
//! permutation strategy, and the log-probability scorers.

pub mod parse;
pub mod scoring;
pub mod window;

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::metrics::MetricsError;
use crate::prompting::{InstructionKind, PromptError, DEFAULT_MAX_WORDS};
use crate::types::ValidationError;

pub use parse::{parse_permutation, Anomalies, ParsedPermutation};
pub use scoring::{
    query_gen_score, rank_by_scores, relevance_score, score_query_gen, score_relevance_gen,
    RelevanceScores, ScoreVector,
};
pub use window::{
    apply_permutation, hybrid_topk_rerank, sliding_rerank, window_starts, SlidingOutcome,
    WindowRecord,
};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("query `{query_id}`, pass {pass}, window {window}: {source}")]
    Window {
        query_id: String,
        pass: usize,
        window: usize,
        #[source]
        source: GatewayError,
    },
    #[error("query `{query_id}`, candidate `{docid}`: {source}")]
    Scoring {
        query_id: String,
        docid: String,
        #[source]
        source: GatewayError,
    },
    #[error("window has {window} candidates but the order has {order}")]
    LengthMismatch { window: usize, order: usize },
    #[error("order is not a permutation")]
    InvalidOrder,
    #[error("top-k {k} must be in 1..={len}")]
    TopK { k: usize, len: usize },
    #[error("query `{0}` has no candidates")]
    Empty(String),
    #[error("{0:?} is not a permutation instruction")]
    UnsupportedKind(InstructionKind),
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl RerankError {
    /// The underlying gateway failure, if this is one.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            RerankError::Window { source, .. } | RerankError::Scoring { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankOptions {
    pub max_words: usize,
    /// Persistence used for the window-overlap RBO samples.
    pub rbo_persistence: f64,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            max_words: DEFAULT_MAX_WORDS,
            rbo_persistence: crate::metrics::DEFAULT_RBO_P,
        }
    }
}
