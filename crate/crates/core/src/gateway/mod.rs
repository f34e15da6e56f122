//! Transport to language models.
//!
//! [`Gateway`] wraps any [`LanguageModel`] with an admission bound and a
//! per-query usage ledger. Two model families live underneath:
//! [`openai::OpenAiClient`] speaks the OpenAI-compatible HTTP protocol, and
//! [`mock`] holds deterministic in-process models for offline runs and tests.

pub mod mock;
pub mod openai;

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

pub const API_KEY_ENV: &str = "PERMURANK_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http {
        status: u16,
        body: String,
        attempts: usize,
    },
    #[error("endpoint cannot provide {0}")]
    Capability(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("mock model: {0}")]
    Mock(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Base URL, e.g. `https://api.openai.com`; `/v1/...` paths are appended.
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout: Duration,
    pub max_retries: usize,
    pub max_in_flight: usize,
    /// First backoff delay; doubles per retry, jittered.
    pub backoff_base: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 256,
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            max_in_flight: 4,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!(
                "temperature {} must be ≥ 0",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be ≥ 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::Config("model name must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LlmResponse {
    pub text: String,
    /// For echo prompts: the suffix tokens. Otherwise: the generated tokens.
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Anything that can answer a rendered prompt.
pub trait LanguageModel: Send + Sync {
    fn generate(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<LlmResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub requests: u64,
}

impl Usage {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Per-query token and request counters; only ever incremented.
#[derive(Debug, Default)]
pub struct UsageLedger {
    per_query: Mutex<BTreeMap<String, Usage>>,
}

impl UsageLedger {
    pub fn record(&self, query_id: &str, response: &LlmResponse) {
        let mut map = self.per_query.lock().expect("ledger lock");
        let u = map.entry(query_id.to_string()).or_default();
        u.prompt_tokens += response.prompt_tokens;
        u.completion_tokens += response.completion_tokens;
        u.requests += 1;
    }

    pub fn query(&self, query_id: &str) -> Usage {
        self.per_query
            .lock()
            .expect("ledger lock")
            .get(query_id)
            .copied()
            .unwrap_or_default()
    }

    pub fn total(&self) -> Usage {
        self.per_query
            .lock()
            .expect("ledger lock")
            .values()
            .fold(Usage::default(), |mut acc, u| {
                acc.prompt_tokens += u.prompt_tokens;
                acc.completion_tokens += u.completion_tokens;
                acc.requests += u.requests;
                acc
            })
    }

    pub fn snapshot(&self) -> BTreeMap<String, Usage> {
        self.per_query.lock().expect("ledger lock").clone()
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Admission {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Admission);

impl Admission {
    fn new(slots: usize) -> Self {
        Self {
            free: Mutex::new(slots.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("admission lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("admission lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("admission lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Shared entry point for all model calls.
pub struct Gateway {
    model: Box<dyn LanguageModel>,
    ledger: UsageLedger,
    admission: Admission,
}

impl Gateway {
    pub fn new(model: Box<dyn LanguageModel>, max_in_flight: usize) -> Self {
        Self {
            model,
            ledger: UsageLedger::default(),
            admission: Admission::new(max_in_flight),
        }
    }

    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<LlmResponse, GatewayError> {
        let _permit = self.admission.acquire();
        let response = self.model.generate(prompt, want_logprobs)?;
        if let Some(lp) = &response.token_logprobs {
            if let Some(bad) = lp.iter().find(|t| !(t.logprob <= 0.0)) {
                return Err(GatewayError::Malformed(format!(
                    "log-probability {} for token {:?} is not ≤ 0",
                    bad.logprob, bad.token
                )));
            }
        }
        self.ledger.record(&prompt.query_id, &response);
        Ok(response)
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }
}
