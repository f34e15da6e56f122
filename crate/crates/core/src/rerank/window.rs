//! Back-to-first sliding-window permutation re-ranking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::{parse_permutation, Anomalies};
use super::{RerankError, RerankOptions};
use crate::gateway::Gateway;
use crate::metrics::rbo;
use crate::prompting::{render_window, InstructionKind};
use crate::types::{Candidate, CandidateList, InitialOrder, Passage, Ranking, WindowConfig};

/// 0-indexed window start positions for one pass over `m` items: the last
/// window first, then stepping toward the head, always ending at 0.
pub fn window_starts(m: usize, window: usize, step: usize) -> Vec<usize> {
    if m == 0 || window == 0 || step == 0 {
        return Vec::new();
    }
    let mut starts = Vec::new();
    let mut start = m.saturating_sub(window);
    loop {
        starts.push(start);
        if start == 0 {
            break;
        }
        start = start.saturating_sub(step);
    }
    starts
}

/// `out[k] = items[order[k] - 1]`.
pub fn apply_permutation<T: Clone>(items: &[T], order: &[usize]) -> Result<Vec<T>, RerankError> {
    if items.len() != order.len() {
        return Err(RerankError::LengthMismatch {
            window: items.len(),
            order: order.len(),
        });
    }
    if !crate::types::is_permutation_of_1_to_n(order) {
        return Err(RerankError::InvalidOrder);
    }
    Ok(order.iter().map(|&i| items[i - 1].clone()).collect())
}

/// One processed window, as written to trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub query_id: String,
    pub pass: usize,
    pub window: usize,
    /// 1-indexed, inclusive.
    pub start: usize,
    pub end: usize,
    pub prompt_hash: String,
    pub raw_text: String,
    pub parsed_order: Vec<usize>,
    pub anomalies: Anomalies,
    /// Agreement with the previous window on the passages both ranked.
    pub rbo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingOutcome {
    pub ranking: Ranking,
    /// Docids in final order.
    pub order: Vec<String>,
    pub anomalies: Vec<Anomalies>,
    pub rbo_samples: Vec<f64>,
    pub windows: Vec<WindowRecord>,
}

fn query_seed(seed: u64, query_id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(query_id.as_bytes());
    seed ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub(crate) fn initial_arrangement(list: &CandidateList, policy: InitialOrder) -> Vec<Candidate> {
    let mut items = list.candidates().to_vec();
    match policy {
        InitialOrder::AsRetrieved => {}
        InitialOrder::Reversed => items.reverse(),
        InitialOrder::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(query_seed(seed, list.query().id()));
            items.shuffle(&mut rng);
        }
    }
    items
}

pub fn sliding_rerank(
    list: &CandidateList,
    config: &WindowConfig,
    kind: InstructionKind,
    gateway: &Gateway,
    options: &RerankOptions,
) -> Result<SlidingOutcome, RerankError> {
    if !kind.is_permutation() {
        return Err(RerankError::UnsupportedKind(kind));
    }
    if list.is_empty() {
        return Err(RerankError::Empty(list.query().id().to_string()));
    }
    let query = list.query();
    let m = list.len();
    let mut items = initial_arrangement(list, config.initial_order());
    let mut anomalies = Vec::new();
    let mut rbo_samples = Vec::new();
    let mut windows = Vec::new();

    for pass in 1..=config.passes() {
        // (start, end, docids after re-ranking) of the window to the right
        let mut previous: Option<(usize, Vec<String>)> = None;
        for (wi, start) in window_starts(m, config.window(), config.step())
            .into_iter()
            .enumerate()
        {
            let end = (start + config.window()).min(m);
            let passages: Vec<Passage> = items[start..end].iter().map(|c| c.passage.clone()).collect();
            let prompt = render_window(kind, query, &passages, config.window(), options.max_words)?;
            let response = gateway
                .complete(&prompt, false)
                .map_err(|source| RerankError::Window {
                    query_id: query.id().to_string(),
                    pass,
                    window: wi,
                    source,
                })?;
            let parsed = parse_permutation(&response.text, end - start);
            let reordered = apply_permutation(&items[start..end], &parsed.order)?;
            items.splice(start..end, reordered);
            let after: Vec<String> = items[start..end]
                .iter()
                .map(|c| c.passage.docid().to_string())
                .collect();

            let sample = match &previous {
                Some((prev_start, prev_after)) if *prev_start < end => {
                    let shared = &prev_after[..end - prev_start];
                    let now: Vec<&String> = after.iter().filter(|d| shared.contains(d)).collect();
                    let before: Vec<&String> = shared.iter().collect();
                    Some(rbo(&before, &now, options.rbo_persistence)?)
                }
                _ => None,
            };
            if let Some(v) = sample {
                rbo_samples.push(v);
            }
            anomalies.push(parsed.anomalies);
            windows.push(WindowRecord {
                query_id: query.id().to_string(),
                pass,
                window: wi,
                start: start + 1,
                end,
                prompt_hash: prompt.digest(),
                raw_text: response.text,
                parsed_order: parsed.order,
                anomalies: parsed.anomalies,
                rbo: sample,
            });
            previous = Some((start, after));
        }
    }

    let order: Vec<String> = items.iter().map(|c| c.passage.docid().to_string()).collect();
    Ok(SlidingOutcome {
        ranking: Ranking::from_order(query.id(), order.clone())?,
        order,
        anomalies,
        rbo_samples,
        windows,
    })
}

/// Re-ranks only the first `k` candidates; the tail keeps its order.
/// Scores are positional over the whole list.
pub fn hybrid_topk_rerank(
    base: &CandidateList,
    k: usize,
    config: &WindowConfig,
    kind: InstructionKind,
    gateway: &Gateway,
    options: &RerankOptions,
) -> Result<SlidingOutcome, RerankError> {
    if k == 0 || k > base.len() {
        return Err(RerankError::TopK { k, len: base.len() });
    }
    let mut outcome = sliding_rerank(&base.head(k), config, kind, gateway, options)?;
    outcome
        .order
        .extend(base.candidates()[k..].iter().map(|c| c.passage.docid().to_string()));
    outcome.ranking = Ranking::from_order(base.query().id(), outcome.order.clone())?;
    Ok(outcome)
}
