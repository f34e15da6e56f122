//! OpenAI-compatible HTTP client.
//!
//! Chat prompts go to `/v1/chat/completions`, text prompts to
//! `/v1/completions`. Query-generation prompts carry an echo suffix whose
//! token log-probabilities are requested with `echo: true`; only the
//! completion endpoint can do that.

use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{GatewayConfig, GatewayError, LanguageModel, LlmResponse, TokenLogprob, API_KEY_ENV};
use crate::prompting::{PromptBody, RenderedPrompt};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body. Errors are connection-level failures
/// (refused, reset, timed out); any HTTP status is a successful reply.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, String> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

pub struct OpenAiClient {
    config: GatewayConfig,
    api_key: Option<String>,
    transport: Box<dyn Transport>,
}

/// Statuses worth another attempt: rate limiting and server-side failures.
pub fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl OpenAiClient {
    /// HTTP client using `reqwest` and the API key from the environment.
    pub fn from_env(config: GatewayConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self::with_transport(
            config,
            key,
            Box::new(ReqwestTransport::new()?),
        ))
    }

    pub fn with_transport(
        config: GatewayConfig,
        api_key: Option<String>,
        transport: Box<dyn Transport>,
    ) -> Self {
        Self {
            config,
            api_key,
            transport,
        }
    }

    fn url(&self, path: &str) -> String {
        let base = self.config.endpoint_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/{path}")
        } else {
            format!("{base}/v1/{path}")
        }
    }

    /// Builds `(url, body)` for a prompt.
    pub fn request_for(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<(String, Value), GatewayError> {
        let c = &self.config;
        match &prompt.body {
            PromptBody::Chat(messages) => {
                if prompt.echo_suffix.is_some() && want_logprobs {
                    return Err(GatewayError::Capability(
                        "echoed prompt log-probabilities on the chat endpoint".into(),
                    ));
                }
                let mut body = json!({
                    "model": c.model_name,
                    "messages": messages
                        .iter()
                        .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                        .collect::<Vec<_>>(),
                    "temperature": c.temperature,
                    "max_tokens": c.max_output_tokens,
                });
                if want_logprobs {
                    body["logprobs"] = json!(true);
                }
                Ok((self.url("chat/completions"), body))
            }
            PromptBody::Text(text) => {
                let mut body = json!({
                    "model": c.model_name,
                    "temperature": c.temperature,
                });
                match (&prompt.echo_suffix, want_logprobs) {
                    (Some(suffix), true) => {
                        body["prompt"] = json!(format!("{text}{suffix}"));
                        body["echo"] = json!(true);
                        body["logprobs"] = json!(1);
                        body["max_tokens"] = json!(0);
                    }
                    (_, wants) => {
                        body["prompt"] = json!(text);
                        body["max_tokens"] = json!(c.max_output_tokens);
                        if wants {
                            body["logprobs"] = json!(1);
                        }
                    }
                }
                Ok((self.url("completions"), body))
            }
        }
    }

    fn backoff(&self, retry: usize) -> Duration {
        let base = self.config.backoff_base.as_secs_f64() * 2f64.powi(retry as i32);
        let jitter: f64 = rand::rng().random_range(0.5..1.0);
        Duration::from_secs_f64(base * jitter)
    }

    fn post_with_retries(&self, url: &str, body: &Value) -> Result<String, GatewayError> {
        let attempts_allowed = self.config.max_retries + 1;
        let mut last: Option<GatewayError> = None;
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                std::thread::sleep(self.backoff(attempt - 2));
            }
            match self.transport.post_json(
                url,
                self.api_key.as_deref(),
                body,
                self.config.request_timeout,
            ) {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply.body),
                Ok(reply) => {
                    let err = GatewayError::Http {
                        status: reply.status,
                        body: reply.body,
                        attempts: attempt,
                    };
                    if !is_retryable_status(reply.status) {
                        return Err(err);
                    }
                    log::warn!("{url}: {err}; retrying");
                    last = Some(err);
                }
                Err(message) => {
                    log::warn!("{url}: {message}; retrying");
                    last = Some(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn usage(v: &Value) -> (u64, u64) {
    let u = &v["usage"];
    (
        u["prompt_tokens"].as_u64().unwrap_or(0),
        u["completion_tokens"].as_u64().unwrap_or(0),
    )
}

/// Parses a `/v1/chat/completions` response body.
pub fn parse_chat_response(body: &str, want_logprobs: bool) -> Result<LlmResponse, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    let choice = v["choices"]
        .get(0)
        .ok_or_else(|| GatewayError::Malformed("no choices".into()))?;
    let text = choice["message"]["content"].as_str().unwrap_or("").to_string();
    let token_logprobs = if want_logprobs {
        let content = choice["logprobs"]["content"].as_array().ok_or_else(|| {
            GatewayError::Capability("token log-probabilities (chat endpoint omitted them)".into())
        })?;
        Some(
            content
                .iter()
                .map(|t| {
                    Ok(TokenLogprob {
                        token: t["token"].as_str().unwrap_or("").to_string(),
                        logprob: t["logprob"]
                            .as_f64()
                            .ok_or_else(|| GatewayError::Malformed("logprob missing".into()))?,
                    })
                })
                .collect::<Result<Vec<_>, GatewayError>>()?,
        )
    } else {
        None
    };
    let (prompt_tokens, completion_tokens) = usage(&v);
    Ok(LlmResponse {
        text,
        token_logprobs,
        prompt_tokens,
        completion_tokens,
    })
}

/// Parses a `/v1/completions` response body. With `echo_prefix`, the reply
/// echoes `prefix + suffix` and only tokens reaching into the suffix are kept.
pub fn parse_completion_response(
    body: &str,
    want_logprobs: bool,
    echo_prefix: Option<&str>,
) -> Result<LlmResponse, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    let choice = v["choices"]
        .get(0)
        .ok_or_else(|| GatewayError::Malformed("no choices".into()))?;
    let mut text = choice["text"].as_str().unwrap_or("").to_string();
    let token_logprobs = if want_logprobs {
        let lp = &choice["logprobs"];
        let tokens = lp["tokens"].as_array().ok_or_else(|| {
            GatewayError::Capability("token log-probabilities (completion endpoint omitted them)".into())
        })?;
        let values = lp["token_logprobs"]
            .as_array()
            .ok_or_else(|| GatewayError::Malformed("token_logprobs missing".into()))?;
        if values.len() != tokens.len() {
            return Err(GatewayError::Malformed("tokens/token_logprobs length mismatch".into()));
        }
        let tokens: Vec<String> = tokens
            .iter()
            .map(|t| t.as_str().unwrap_or("").to_string())
            .collect();
        let offsets: Vec<usize> = match lp["text_offset"].as_array() {
            Some(o) if o.len() == tokens.len() => {
                o.iter().map(|x| x.as_u64().unwrap_or(0) as usize).collect()
            }
            _ => tokens
                .iter()
                .scan(0usize, |acc, t| {
                    let start = *acc;
                    *acc += t.chars().count();
                    Some(start)
                })
                .collect(),
        };
        let prefix_chars = echo_prefix.map_or(0, |p| p.chars().count());
        let mut out = Vec::new();
        for ((tok, val), off) in tokens.iter().zip(values).zip(offsets) {
            if echo_prefix.is_some() && off + tok.chars().count() <= prefix_chars {
                continue;
            }
            let logprob = val
                .as_f64()
                .ok_or_else(|| GatewayError::Malformed(format!("null logprob for {tok:?}")))?;
            out.push(TokenLogprob {
                token: tok.clone(),
                logprob,
            });
        }
        Some(out)
    } else {
        None
    };
    if let Some(prefix) = echo_prefix {
        if let Some(rest) = text.strip_prefix(prefix) {
            text = rest.to_string();
        }
    }
    let (prompt_tokens, completion_tokens) = usage(&v);
    Ok(LlmResponse {
        text,
        token_logprobs,
        prompt_tokens,
        completion_tokens,
    })
}

impl LanguageModel for OpenAiClient {
    fn generate(
        &self,
        prompt: &RenderedPrompt,
        want_logprobs: bool,
    ) -> Result<LlmResponse, GatewayError> {
        let (url, body) = self.request_for(prompt, want_logprobs)?;
        let reply = self.post_with_retries(&url, &body)?;
        match &prompt.body {
            PromptBody::Chat(_) => parse_chat_response(&reply, want_logprobs),
            PromptBody::Text(text) => {
                let echo = prompt
                    .echo_suffix
                    .as_ref()
                    .filter(|_| want_logprobs)
                    .map(|_| text.as_str());
                parse_completion_response(&reply, want_logprobs, echo)
            }
        }
    }
}
