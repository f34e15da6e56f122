//! Deterministic in-process models.
//!
//! [`MockOracle`] plays a perfect (or deliberately faulty) ranker from a
//! hidden truth: permutation prompts get identifiers sorted by descending
//! truth, relevance prompts get Yes/No with a truth-monotone probability,
//! query-generation prompts get truth-monotone token log-probabilities.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GatewayError, LanguageModel, LlmResponse, TokenLogprob};
use crate::prompting::{InstructionKind, RenderedPrompt};
use crate::types::Judgments;

pub const REJECTION_TEXT: &str = "None of the provided passages is directly relevant to the query";

/// Returns canned responses in order, repeating the last one.
pub struct ScriptedModel {
    responses: Vec<String>,
    logprobs: Option<Vec<TokenLogprob>>,
    next: AtomicUsize,
}

impl ScriptedModel {
    pub fn constant(text: impl Into<String>) -> Self {
        Self::sequence(vec![text.into()])
    }

    pub fn sequence(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "scripted model needs a response");
        Self {
            responses,
            logprobs: None,
            next: AtomicUsize::new(0),
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<TokenLogprob>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }
}

impl LanguageModel for ScriptedModel {
    fn generate(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<LlmResponse, GatewayError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst).min(self.responses.len() - 1);
        let text = self.responses[i].clone();
        let token_logprobs = match (want_logprobs, &self.logprobs) {
            (false, _) => None,
            (true, Some(lp)) => Some(lp.clone()),
            (true, None) => {
                return Err(GatewayError::Capability(
                    "token log-probabilities (scripted model has none)".into(),
                ))
            }
        };
        Ok(LlmResponse {
            completion_tokens: text.split_whitespace().count() as u64,
            prompt_tokens: prompt.word_count() as u64,
            text,
            token_logprobs,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaultRates {
    pub duplicate_rate: f64,
    pub drop_rate: f64,
    pub reject_rate: f64,
}

impl FaultRates {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        for (name, v) in [
            ("duplicate_rate", self.duplicate_rate),
            ("drop_rate", self.drop_rate),
            ("reject_rate", self.reject_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GatewayError::Config(format!("{name} = {v} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Truth {
    /// Every docid must be present.
    Scores(HashMap<String, f64>),
    /// Unjudged pairs count as grade 0.
    Judged(Judgments),
}

#[derive(Debug, Clone)]
pub struct MockOracle {
    truth: Truth,
    faults: FaultRates,
    seed: u64,
}

impl MockOracle {
    pub fn from_scores(scores: HashMap<String, f64>) -> Self {
        Self {
            truth: Truth::Scores(scores),
            faults: FaultRates::none(),
            seed: 0,
        }
    }

    pub fn from_judgments(judgments: Judgments) -> Self {
        Self {
            truth: Truth::Judged(judgments),
            faults: FaultRates::none(),
            seed: 0,
        }
    }

    pub fn with_faults(mut self, faults: FaultRates, seed: u64) -> Result<Self, GatewayError> {
        faults.validate()?;
        self.faults = faults;
        self.seed = seed;
        Ok(self)
    }

    fn truth(&self, query_id: &str, docid: &str) -> Result<f64, GatewayError> {
        match &self.truth {
            Truth::Scores(m) => m
                .get(docid)
                .copied()
                .ok_or_else(|| GatewayError::Mock(format!("no truth score for docid `{docid}`"))),
            Truth::Judged(j) => Ok(j.grade(query_id, docid) as f64),
        }
    }

    fn rng_for(&self, prompt: &RenderedPrompt) -> ChaCha8Rng {
        let digest = prompt.digest();
        let mix = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        ChaCha8Rng::seed_from_u64(self.seed ^ mix)
    }

    /// Identifiers sorted by descending truth, ties by ascending identifier.
    pub fn truth_order(&self, prompt: &RenderedPrompt) -> Result<Vec<usize>, GatewayError> {
        let ids = prompt
            .identifier_map
            .as_ref()
            .ok_or_else(|| GatewayError::Mock("permutation prompt without identifiers".into()))?;
        let mut keyed = Vec::with_capacity(ids.len());
        for (i, docid) in ids.iter().enumerate() {
            keyed.push((i + 1, self.truth(&prompt.query_id, docid)?));
        }
        keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(keyed.into_iter().map(|(i, _)| i).collect())
    }

    fn permutation_text(&self, prompt: &RenderedPrompt) -> Result<String, GatewayError> {
        let order = self.truth_order(prompt)?;
        let f = self.faults;
        if f == FaultRates::none() {
            return Ok(format_identifiers(&order));
        }
        let mut rng = self.rng_for(prompt);
        if rng.random::<f64>() < f.reject_rate {
            return Ok(REJECTION_TEXT.to_string());
        }
        let mut out = Vec::with_capacity(order.len() + 4);
        for id in order {
            if rng.random::<f64>() < f.drop_rate {
                continue;
            }
            out.push(id);
            if rng.random::<f64>() < f.duplicate_rate {
                out.push(id);
            }
        }
        Ok(format_identifiers(&out))
    }

    fn target_truth(&self, prompt: &RenderedPrompt) -> Result<f64, GatewayError> {
        let docid = prompt
            .target_docid
            .as_deref()
            .ok_or_else(|| GatewayError::Mock("single-passage prompt without a docid".into()))?;
        self.truth(&prompt.query_id, docid)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[a] > [b] > ...`
pub fn format_identifiers(order: &[usize]) -> String {
    order
        .iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}

impl LanguageModel for MockOracle {
    fn generate(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<LlmResponse, GatewayError> {
        let (text, token_logprobs) = match prompt.kind {
            InstructionKind::PermutationChat | InstructionKind::PermutationText => {
                (self.permutation_text(prompt)?, None)
            }
            InstructionKind::RelevanceGenFewShot | InstructionKind::RelevanceGenZeroShot => {
                let t = self.target_truth(prompt)?;
                let (answer, p) = if t > 0.0 {
                    ("Yes", sigmoid(t))
                } else {
                    ("No", sigmoid(-t))
                };
                let lp = want_logprobs.then(|| {
                    vec![TokenLogprob {
                        token: format!(" {answer}"),
                        logprob: p.ln(),
                    }]
                });
                (format!(" {answer}"), lp)
            }
            InstructionKind::QueryGen => {
                let t = self.target_truth(prompt)?;
                let suffix = prompt.echo_suffix.as_deref().unwrap_or_default();
                let per_token = sigmoid(t).ln();
                let lp = want_logprobs.then(|| {
                    suffix
                        .split_whitespace()
                        .map(|w| TokenLogprob {
                            token: w.to_string(),
                            logprob: per_token,
                        })
                        .collect()
                });
                (String::new(), lp)
            }
        };
        Ok(LlmResponse {
            prompt_tokens: prompt.word_count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            text,
            token_logprobs,
        })
    }
}
