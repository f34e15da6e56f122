//! Pointwise log-probability scorers: query generation and relevance
//! generation.

use super::{RerankError, RerankOptions};
use crate::gateway::{Gateway, GatewayError};
use crate::prompting::{render_single, InstructionKind};
use crate::types::{CandidateList, Ranking};

/// Per-candidate scores aligned with the candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self, RerankError> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(RerankError::NonFiniteScore(i));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Mean token log-probability; `None` for an empty sequence.
pub fn query_gen_score(logprobs: &[f64]) -> Option<f64> {
    if logprobs.is_empty() {
        None
    } else {
        Some(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
    }
}

/// `1 + p` for a Yes token, `1 - p` for a No token, and the neutral `1.0`
/// otherwise. The flag is true when the token was neither.
pub fn relevance_score(token: &str, logprob: f64) -> (f64, bool) {
    let p = logprob.exp().clamp(0.0, 1.0);
    match token.trim().to_lowercase().as_str() {
        "yes" => (1.0 + p, false),
        "no" => (1.0 - p, false),
        _ => (1.0, true),
    }
}

pub fn score_query_gen(
    gateway: &Gateway,
    list: &CandidateList,
    options: &RerankOptions,
) -> Result<ScoreVector, RerankError> {
    let mut scores = Vec::with_capacity(list.len());
    for c in list.candidates() {
        let prompt = render_single(InstructionKind::QueryGen, list.query(), &c.passage, options.max_words)?;
        let wrap = |source| RerankError::Scoring {
            query_id: list.query().id().to_string(),
            docid: c.passage.docid().to_string(),
            source,
        };
        let response = gateway.complete(&prompt, true).map_err(wrap)?;
        let lps: Vec<f64> = response
            .token_logprobs
            .unwrap_or_default()
            .iter()
            .map(|t| t.logprob)
            .collect();
        let s = query_gen_score(&lps).ok_or_else(|| {
            wrap(GatewayError::Capability("log-probabilities for the query tokens".into()))
        })?;
        scores.push(s);
    }
    ScoreVector::new(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub scores: ScoreVector,
    /// Candidates whose judgment token was neither yes nor no.
    pub anomalies: usize,
}

pub fn score_relevance_gen(
    gateway: &Gateway,
    list: &CandidateList,
    few_shot: bool,
    options: &RerankOptions,
) -> Result<RelevanceScores, RerankError> {
    let kind = if few_shot {
        InstructionKind::RelevanceGenFewShot
    } else {
        InstructionKind::RelevanceGenZeroShot
    };
    let mut scores = Vec::with_capacity(list.len());
    let mut anomalies = 0;
    for c in list.candidates() {
        let prompt = render_single(kind, list.query(), &c.passage, options.max_words)?;
        let wrap = |source| RerankError::Scoring {
            query_id: list.query().id().to_string(),
            docid: c.passage.docid().to_string(),
            source,
        };
        let response = gateway.complete(&prompt, true).map_err(wrap)?;
        let (s, odd) = match response.token_logprobs.as_deref().and_then(|t| t.first()) {
            Some(first) => relevance_score(&first.token, first.logprob),
            // no generated token at all
            None if response.text.trim().is_empty() => (1.0, true),
            None => {
                return Err(wrap(GatewayError::Capability(
                    "log-probability of the judgment token".into(),
                )))
            }
        };
        anomalies += odd as usize;
        scores.push(s);
    }
    Ok(RelevanceScores {
        scores: ScoreVector::new(scores)?,
        anomalies,
    })
}

/// Sorts candidates by score, ties by initial rank.
pub fn rank_by_scores(list: &CandidateList, scores: &ScoreVector) -> Result<Ranking, RerankError> {
    if scores.as_slice().len() != list.len() {
        return Err(RerankError::LengthMismatch {
            window: list.len(),
            order: scores.as_slice().len(),
        });
    }
    let scored = list
        .candidates()
        .iter()
        .zip(scores.as_slice())
        .map(|(c, &s)| (c.passage.docid().to_string(), s))
        .collect();
    Ok(Ranking::from_scores(list.query().id(), scored)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockOracle, ScriptedModel};
    use crate::gateway::TokenLogprob;
    use crate::types::{Passage, Query};

    fn list(n: usize) -> CandidateList {
        let q = Query::new("q", "what").unwrap();
        CandidateList::from_ranked(
            q,
            (1..=n).map(|i| (Passage::new(format!("d{i}"), format!("t{i}"), None).unwrap(), 0.0)),
        )
        .unwrap()
    }

    #[test]
    fn mean_logprob() {
        assert_eq!(query_gen_score(&[-1.0, -2.0]), Some(-1.5));
        assert_eq!(query_gen_score(&[-0.1]), Some(-0.1));
        assert_eq!(query_gen_score(&[]), None);
        let a = query_gen_score(&[-0.5, -1.0]).unwrap();
        let b = query_gen_score(&[-0.6, -1.2]).unwrap();
        assert!(a > b);
    }

    #[test]
    fn relevance_branches() {
        let (yes, _) = relevance_score("Yes", 0.9f64.ln());
        assert!((yes - 1.9).abs() < 1e-12);
        let (no, _) = relevance_score(" no ", 0.8f64.ln());
        assert!((no - 0.2).abs() < 1e-12);
        let (maybe, odd) = relevance_score("Maybe", -0.01);
        assert_eq!(maybe, 1.0);
        assert!(odd);
        assert!(no < maybe && maybe < yes);
    }

    #[test]
    fn relevance_over_gateway_counts_anomalies() {
        let model = ScriptedModel::constant("Maybe").with_logprobs(vec![TokenLogprob {
            token: "Maybe".into(),
            logprob: -0.2,
        }]);
        let gw = Gateway::new(Box::new(model), 1);
        let r = score_relevance_gen(&gw, &list(3), true, &RerankOptions::default()).unwrap();
        assert_eq!(r.anomalies, 3);
        assert_eq!(r.scores.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn query_gen_needs_logprobs() {
        let gw = Gateway::new(Box::new(ScriptedModel::constant("x")), 1);
        let err = score_query_gen(&gw, &list(2), &RerankOptions::default()).unwrap_err();
        assert!(matches!(err, RerankError::Scoring { source: GatewayError::Capability(_), .. }));
    }

    #[test]
    fn oracle_scores_follow_truth() {
        let truth = [("d1", 0.0), ("d2", 2.0), ("d3", 1.0)]
            .into_iter()
            .map(|(d, s)| (d.to_string(), s))
            .collect();
        let gw = Gateway::new(Box::new(MockOracle::from_scores(truth)), 1);
        let l = list(3);
        let qg = score_query_gen(&gw, &l, &RerankOptions::default()).unwrap();
        let ranking = rank_by_scores(&l, &qg).unwrap();
        assert_eq!(ranking.docids().collect::<Vec<_>>(), ["d2", "d3", "d1"]);
        let rg = score_relevance_gen(&gw, &l, false, &RerankOptions::default()).unwrap();
        assert!(rg.scores.as_slice().iter().all(|s| (0.0..=2.0).contains(s)));
        let ranking = rank_by_scores(&l, &rg.scores).unwrap();
        assert_eq!(ranking.docids().collect::<Vec<_>>(), ["d2", "d3", "d1"]);
        assert_eq!(gw.ledger().query("q").requests, 6);
    }

    #[test]
    fn ties_keep_initial_rank() {
        let l = list(3);
        let r = rank_by_scores(&l, &ScoreVector::new(vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(r.docids().collect::<Vec<_>>(), ["d1", "d2", "d3"]);
        assert!(ScoreVector::new(vec![f64::INFINITY]).is_err());
    }
}
