//! Instruction templates and prompt rendering.
//!
//! The five templates are stored verbatim and filled by `{{name}}`
//! substitution only. Substitution is single-pass, so placeholder-looking
//! text inside a passage or query is never expanded.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CandidateList, Passage, Query};

pub const DEFAULT_MAX_WORDS: usize = 120;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("permutation prompts need at least one candidate")]
    EmptyCandidates,
    #[error("{got} candidates exceed the window size {window}")]
    WindowExceeded { got: usize, window: usize },
    #[error("{0:?} renders a single passage, not a candidate list")]
    WrongInput(InstructionKind),
    #[error("unknown template name `{0}`")]
    UnknownTemplate(String),
    #[error("max_words must be at least 1")]
    ZeroMaxWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    QueryGen,
    RelevanceGenFewShot,
    RelevanceGenZeroShot,
    PermutationText,
    PermutationChat,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 5] = [
        InstructionKind::QueryGen,
        InstructionKind::RelevanceGenFewShot,
        InstructionKind::RelevanceGenZeroShot,
        InstructionKind::PermutationText,
        InstructionKind::PermutationChat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstructionKind::QueryGen => "qg",
            InstructionKind::RelevanceGenFewShot => "rg-few",
            InstructionKind::RelevanceGenZeroShot => "rg-zero",
            InstructionKind::PermutationText => "pg-text",
            InstructionKind::PermutationChat => "pg-chat",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, PromptError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn is_permutation(self) -> bool {
        matches!(self, InstructionKind::PermutationText | InstructionKind::PermutationChat)
    }

    /// Whether the rendered prompt is a message list rather than plain text.
    pub fn is_chat(self) -> bool {
        self == InstructionKind::PermutationChat
    }
}

pub mod templates {
    //! Verbatim template text.

    pub const QUERY_GEN: &str = "Please write a question based on this passage.\n\nPassage: {{passage}}\n\nQuestion: ";

    pub const RELEVANCE_PREAMBLE: &str = "Given a passage and a query, predict whether the passage includes an answer to the query by producing either `Yes` or `No`.";

    pub const RELEVANCE_DEMONSTRATIONS: &str = "Passage: Its 25 drops per ml, you guys are all wrong. If it is water, the standard was changed 15 - 20 years ago to make 20 drops = 1mL. The viscosity of most things is temperature dependent, so this would be at room temperature. Hope this helps.

Query: how many eye drops per ml

Does the passage answer the query?

Answer: Yes

Passage: RE: How many eyedrops are there in a 10 ml bottle of Cosopt? My Kaiser pharmacy insists that 2 bottles should last me 100 days but I run out way before that time when I am using 4 drops per day.In the past other pharmacies have given me 3 10-ml bottles for 100 days.E: How many eyedrops are there in a 10 ml bottle of Cosopt? My Kaiser pharmacy insists that 2 bottles should last me 100 days but I run out way before that time when I am using 4 drops per day.

Query: how many eye drops per ml

Does the passage answer the query?

Answer: No

Passage: : You can transfer money to your checking account from other Wells Fargo. accounts through Wells Fargo Mobile Banking with the mobile app, online, at any. Wells Fargo ATM, or at a Wells Fargo branch. 1 Money in — deposits.

Query: can you open a wells fargo account online

Does the passage answer the query?

Answer: No

Passage: You can open a Wells Fargo banking account from your home or even online. It is really easy to do, provided you have all of the appropriate documentation. Wells Fargo has so many bank account options that you will be sure to find one that works for you. They offer free checking accounts with free online banking.

Query: can you open a wells fargo account online

Does the passage answer the query?

Answer: Yes";

    pub const RELEVANCE_TARGET: &str =
        "Passage: {{passage}}\n\nQuery: {{query}}\n\nDoes the passage answer the query?\n\nAnswer:";

    pub const PERMUTATION_TEXT_HEAD: &str = "This is RankGPT, an intelligent assistant that can rank passages based on their relevancy to the query.\n\nThe following are {{num}} passages, each indicated by number identifier []. I can rank them based on their relevance to query: {{query}}";

    pub const PERMUTATION_TEXT_PASSAGE: &str = "[{{id}}] {{passage}}";

    pub const PERMUTATION_TEXT_TAIL: &str = "The search query is: {{query}}\n\nI will rank the {{num}} passages above based on their relevance to the search query. The passages will be listed in descending order using identifiers, and the most relevant passages should be listed first, and the output format should be [] > [] > etc, e.g., [1] > [2] > etc.\n\nThe ranking results of the {{num}} passages (only identifiers) is:";

    pub const CHAT_SYSTEM: &str = "You are RankGPT, an intelligent assistant that can rank passages based on their relevancy to the query.";

    pub const CHAT_PREAMBLE: &str = "I will provide you with {{num}} passages, each indicated by number identifier []. \nRank them based on their relevance to query: {{query}}.";

    pub const CHAT_READY: &str = "Okay, please provide the passages.";

    pub const CHAT_PASSAGE: &str = "[{{id}}] {{passage}}";

    pub const CHAT_RECEIVED: &str = "Received passage [{{id}}]";

    pub const CHAT_FINAL: &str = "Search Query: {{query}}.\n\nRank the {{num}} passages above based on their relevance to the search query. The passages should be listed in descending order using identifiers, and the most relevant passages should be listed first, and the output format should be [] > [], e.g., [1] > [2]. Only response the ranking results, do not say any word or explain.";
}

/// Single-pass `{{name}}` substitution. Unknown placeholders are left as is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let lookup: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match lookup.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// First `max_words` whitespace-delimited words, rejoined with single spaces.
pub fn truncate_passage(text: &str, max_words: usize) -> String {
    text.split_whitespace()
        .take(max_words.max(1))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

impl PromptMessage {
    fn new(role: Role, content: String) -> Self {
        debug_assert!(!content.is_empty());
        Self { role, content }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptBody {
    Chat(Vec<PromptMessage>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: InstructionKind,
    pub query_id: String,
    pub body: PromptBody,
    /// `identifier_map[i]` is the docid shown as `[i + 1]`; permutation kinds only.
    pub identifier_map: Option<Vec<String>>,
    /// Text whose token log-probabilities are wanted (query generation).
    pub echo_suffix: Option<String>,
    /// The single passage scored by query/relevance generation prompts.
    pub target_docid: Option<String>,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Option<&[PromptMessage]> {
        match &self.body {
            PromptBody::Chat(m) => Some(m),
            PromptBody::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.body {
            PromptBody::Text(t) => Some(t),
            PromptBody::Chat(_) => None,
        }
    }

    /// Stable content digest, used to key traces and mock randomness.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        match &self.body {
            PromptBody::Text(t) => {
                h.update(b"text\0");
                h.update(t.as_bytes());
            }
            PromptBody::Chat(ms) => {
                for m in ms {
                    h.update(m.role.as_str().as_bytes());
                    h.update(b"\0");
                    h.update(m.content.as_bytes());
                    h.update(b"\0");
                }
            }
        }
        if let Some(s) = &self.echo_suffix {
            h.update(b"suffix\0");
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Rough whitespace token count of everything sent.
    pub fn word_count(&self) -> usize {
        let body = match &self.body {
            PromptBody::Text(t) => t.split_whitespace().count(),
            PromptBody::Chat(ms) => ms.iter().map(|m| m.content.split_whitespace().count()).sum(),
        };
        body + self
            .echo_suffix
            .as_deref()
            .map_or(0, |s| s.split_whitespace().count())
    }
}

/// Renders a single-passage prompt (query or relevance generation).
pub fn render_single(
    kind: InstructionKind,
    query: &Query,
    passage: &Passage,
    max_words: usize,
) -> Result<RenderedPrompt, PromptError> {
    if max_words == 0 {
        return Err(PromptError::ZeroMaxWords);
    }
    let text = truncate_passage(&passage.full_text(), max_words);
    let (body, echo_suffix) = match kind {
        InstructionKind::QueryGen => (
            fill(templates::QUERY_GEN, &[("passage", &text)]),
            Some(query.text().to_string()),
        ),
        InstructionKind::RelevanceGenFewShot => (
            format!(
                "{}\n\n{}\n\n{}",
                templates::RELEVANCE_PREAMBLE,
                templates::RELEVANCE_DEMONSTRATIONS,
                fill(
                    templates::RELEVANCE_TARGET,
                    &[("passage", &text), ("query", query.text())]
                )
            ),
            None,
        ),
        InstructionKind::RelevanceGenZeroShot => (
            format!(
                "{}\n\n{}",
                templates::RELEVANCE_PREAMBLE,
                fill(
                    templates::RELEVANCE_TARGET,
                    &[("passage", &text), ("query", query.text())]
                )
            ),
            None,
        ),
        other => return Err(PromptError::WrongInput(other)),
    };
    Ok(RenderedPrompt {
        kind,
        query_id: query.id().to_string(),
        body: PromptBody::Text(body),
        identifier_map: None,
        echo_suffix,
        target_docid: Some(passage.docid().to_string()),
    })
}

/// Renders a permutation prompt for one window of candidates; identifier
/// `[i]` is the i-th candidate in the given order.
pub fn render_window(
    kind: InstructionKind,
    query: &Query,
    window: &[Passage],
    window_size: usize,
    max_words: usize,
) -> Result<RenderedPrompt, PromptError> {
    if !kind.is_permutation() {
        return Err(PromptError::WrongInput(kind));
    }
    if max_words == 0 {
        return Err(PromptError::ZeroMaxWords);
    }
    if window.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if window.len() > window_size {
        return Err(PromptError::WindowExceeded {
            got: window.len(),
            window: window_size,
        });
    }
    let num = window.len().to_string();
    let q = query.text();
    let texts: Vec<String> = window
        .iter()
        .map(|p| truncate_passage(&p.full_text(), max_words))
        .collect();
    let body = match kind {
        InstructionKind::PermutationText => {
            let mut parts = Vec::with_capacity(window.len() + 2);
            parts.push(fill(
                templates::PERMUTATION_TEXT_HEAD,
                &[("num", &num), ("query", q)],
            ));
            for (i, t) in texts.iter().enumerate() {
                let id = (i + 1).to_string();
                parts.push(fill(
                    templates::PERMUTATION_TEXT_PASSAGE,
                    &[("id", &id), ("passage", t)],
                ));
            }
            parts.push(fill(
                templates::PERMUTATION_TEXT_TAIL,
                &[("num", &num), ("query", q)],
            ));
            PromptBody::Text(parts.join("\n\n"))
        }
        InstructionKind::PermutationChat => {
            let mut m = Vec::with_capacity(2 * window.len() + 4);
            m.push(PromptMessage::new(Role::System, templates::CHAT_SYSTEM.to_string()));
            m.push(PromptMessage::new(
                Role::User,
                fill(templates::CHAT_PREAMBLE, &[("num", &num), ("query", q)]),
            ));
            m.push(PromptMessage::new(Role::Assistant, templates::CHAT_READY.to_string()));
            for (i, t) in texts.iter().enumerate() {
                let id = (i + 1).to_string();
                m.push(PromptMessage::new(
                    Role::User,
                    fill(templates::CHAT_PASSAGE, &[("id", &id), ("passage", t)]),
                ));
                m.push(PromptMessage::new(
                    Role::Assistant,
                    fill(templates::CHAT_RECEIVED, &[("id", &id)]),
                ));
            }
            m.push(PromptMessage::new(
                Role::User,
                fill(templates::CHAT_FINAL, &[("num", &num), ("query", q)]),
            ));
            PromptBody::Chat(m)
        }
        _ => unreachable!("checked above"),
    };
    Ok(RenderedPrompt {
        kind,
        query_id: query.id().to_string(),
        body,
        identifier_map: Some(window.iter().map(|p| p.docid().to_string()).collect()),
        echo_suffix: None,
        target_docid: None,
    })
}

/// Renders any kind from a candidate list: permutation kinds take the whole
/// list as one window, the others take its first candidate.
pub fn render(
    kind: InstructionKind,
    candidates: &CandidateList,
    window_size: usize,
    max_words: usize,
) -> Result<RenderedPrompt, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if kind.is_permutation() {
        let passages: Vec<Passage> = candidates
            .candidates()
            .iter()
            .map(|c| c.passage.clone())
            .collect();
        render_window(kind, candidates.query(), &passages, window_size, max_words)
    } else {
        render_single(kind, candidates.query(), &candidates.candidates()[0].passage, max_words)
    }
}
