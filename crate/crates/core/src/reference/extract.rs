use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;

/// Prompt sent to the remote extractor; `{query}` is replaced by the question.
pub const DEFAULT_PROMPT: &str = "Extract the noun phrase from the question that refers to the \
asked-about object, keeping any words describing its position or relation to other objects. \
Return null if the question has no such context.\nQuestion: {query}";

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("extractor unavailable: {0}")]
    ExtractorUnavailable(String),
}

/// Turns a natural-language query into a referring expression, or `None`
/// when the query carries no spatial or relational context.
pub trait ReferringExtractor: Send + Sync {
    fn extract(&self, query: &str) -> Result<Option<String>, ExtractorError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedExtractor;

impl ReferringExtractor for RuleBasedExtractor {
    fn extract(&self, query: &str) -> Result<Option<String>, ExtractorError> {
        Ok(rule_based_extract(query))
    }
}

struct Patterns {
    kind_of: Regex,
    which: Regex,
    what_is: Regex,
    trailing: Regex,
    cue: Regex,
    spaces: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        kind_of: Regex::new(
            r"(?i)^(?:what|which)\s+(?:kind|type|sort|brand|model|species|breed|make)\s+of\s+(.+?)\s+(?:is|are)\s+(.+)$",
        )
        .unwrap(),
        which: Regex::new(r"(?i)^which\s+(.+?)\s+(?:is|are)\s+(.+)$").unwrap(),
        what_is: Regex::new(r"(?i)^(?:what|who)(?:\s+is|\s+are|'s|’s)\s+(.+)$").unwrap(),
        trailing: Regex::new(r"[\s?.!]+$").unwrap(),
        cue: Regex::new(
            r"(?i)\b(?:on|in|next\s+to|behind|facing|near|under|holding|left|right)\b",
        )
        .unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
    })
}

/// Deterministic stand-in for a language-model extractor.
///
/// Strips a leading interrogative scaffold ("what is", "what kind of X is",
/// "which X is") and the trailing question mark, then keeps the remainder
/// only if it contains a spatial or relational cue word.
pub fn rule_based_extract(query: &str) -> Option<String> {
    let p = patterns();
    let q = p.spaces.replace_all(query.trim(), " ");
    let q = p.trailing.replace(&q, "");
    let q = q.as_ref();

    let remainder = if let Some(c) = p.kind_of.captures(q) {
        format!("{} {}", &c[1], &c[2])
    } else if let Some(c) = p.which.captures(q) {
        format!("{} {}", &c[1], &c[2])
    } else if let Some(c) = p.what_is.captures(q) {
        c[1].to_string()
    } else {
        q.to_string()
    };

    let remainder = normalize_article(remainder.trim());
    if remainder.is_empty() || !p.cue.is_match(&remainder) {
        return None;
    }
    Some(remainder)
}

fn normalize_article(s: &str) -> String {
    for article in ["The ", "A ", "An "] {
        if let Some(rest) = s.strip_prefix(article) {
            return format!("{}{rest}", article.to_lowercase());
        }
    }
    s.to_string()
}

/// HTTP extractor: `POST {"query", "prompt"}` returning `{"expression": str|null}`.
pub struct RemoteExtractor {
    endpoint: String,
    prompt_template: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    query: &'a str,
    prompt: String,
}

impl RemoteExtractor {
    pub fn new(endpoint: impl Into<String>, prompt_template: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            prompt_template: prompt_template.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ReferringExtractor for RemoteExtractor {
    fn extract(&self, query: &str) -> Result<Option<String>, ExtractorError> {
        let body = RemoteRequest {
            query,
            prompt: self.prompt_template.replace("{query}", query),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| ExtractorError::ExtractorUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ExtractorError::ExtractorUnavailable(format!(
                "{} returned {status}",
                self.endpoint
            )));
        }
        let text = match resp.body_mut().read_to_string() {
            Ok(text) => text,
            Err(ureq::Error::Timeout(t)) => {
                return Err(ExtractorError::ExtractorUnavailable(format!("timeout: {t}")))
            }
            Err(err) => {
                log::warn!("unreadable extractor reply: {err}");
                return Ok(None);
            }
        };
        Ok(parse_reply(&text))
    }
}

fn parse_reply(text: &str) -> Option<String> {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(err) => {
            log::warn!("malformed extractor reply: {err}");
            return None;
        }
    };
    match value.get("expression") {
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Some(serde_json::Value::Null) | Some(serde_json::Value::String(_)) => None,
        _ => {
            log::warn!("extractor reply without a string \"expression\": {text}");
            None
        }
    }
}

/// Remote extractor first, then the rule-based one. Never fails; `None`
/// tells the caller to fall back to the label reference.
pub struct ExtractorChain {
    remote: Option<RemoteExtractor>,
    rules: RuleBasedExtractor,
}

impl ExtractorChain {
    pub fn offline() -> Self {
        Self {
            remote: None,
            rules: RuleBasedExtractor,
        }
    }

    pub fn with_remote(remote: RemoteExtractor) -> Self {
        Self {
            remote: Some(remote),
            rules: RuleBasedExtractor,
        }
    }
}

impl ReferringExtractor for ExtractorChain {
    fn extract(&self, query: &str) -> Result<Option<String>, ExtractorError> {
        if let Some(remote) = &self.remote {
            match remote.extract(query) {
                Ok(Some(expr)) => return Ok(Some(expr)),
                Ok(None) => {}
                Err(err) => log::warn!("{err}; using rule-based extraction"),
            }
        }
        self.rules.extract(query)
    }
}
