//! Rewrites incident descriptions into the five-component use format through a
//! chat-completion endpoint.
//!
//! Every response that yields a draft is stored in an append-only cache keyed
//! by `sha256(incident_id + "\n" + prompt_template)`, so a live run can be
//! replayed offline and bit-identically with `FormatterMode::Replay`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{normalize_label, use_id_for_ordinal, IncidentRecord, UseDraft};

/// Environment variable holding the bearer credential for live mode.
pub const API_KEY_ENV: &str = "ATLAS_API_KEY";

/// Per-component character cap.
pub const MAX_COMPONENT_CHARS: usize = 200;

pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
Rewrite the following AI incident as a description of the AI use involved.
Answer in exactly five labeled lines and nothing else:
Domain: <application industry or sector>
Purpose: <goal of the use>
Capability: <what the AI technology does>
AI user: <who operates the AI system>
AI subject: <who is affected by the AI system>

Incident title: {title}
Incident description: {description}
";

const REPROMPT: &str = "\
Your previous answer could not be parsed. Answer again in exactly five lines, \
each starting with one of these labels: Domain:, Purpose:, Capability:, AI user:, AI subject:";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("invalid formatter configuration: {0}")]
    Config(String),
    #[error("endpoint unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("response could not be parsed into five labeled components ({reason})")]
    Parse { reason: String, raw: String },
    #[error("no cached response for incident {incident_id} (key {key})")]
    CacheMiss { incident_id: u64, key: String },
    #[error("cache file {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatterMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatterConfig {
    pub mode: FormatterMode,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    pub cache_path: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

impl FormatterConfig {
    pub fn replay(cache_path: impl Into<PathBuf>) -> Self {
        Self {
            mode: FormatterMode::Replay,
            endpoint_url: None,
            model_name: None,
            prompt_template: default_template(),
            cache_path: cache_path.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if !self.prompt_template.contains("{title}") || !self.prompt_template.contains("{description}") {
            return Err(FormatError::Config(
                "prompt template must contain {title} and {description}".into(),
            ));
        }
        match self.mode {
            FormatterMode::Live => {
                let url = self
                    .endpoint_url
                    .as_deref()
                    .ok_or_else(|| FormatError::Config("live mode requires an endpoint url".into()))?;
                url::Url::parse(url)
                    .map_err(|e| FormatError::Config(format!("endpoint url `{url}`: {e}")))?;
                if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    return Err(FormatError::Config("live mode requires a model name".into()));
                }
            }
            FormatterMode::Replay => {
                if !self.cache_path.exists() {
                    return Err(FormatError::Config(format!(
                        "replay mode requires an existing cache at {}",
                        self.cache_path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic cache key for one incident under one prompt template.
pub fn request_key(incident_id: u64, prompt_template: &str) -> String {
    let digest = Sha256::digest(format!("{incident_id}\n{prompt_template}").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn render_prompt(template: &str, incident: &IncidentRecord) -> String {
    template
        .replace("{title}", incident.title.trim())
        .replace("{description}", incident.description.trim())
}

/// Raw responses by request key. Entries are never overwritten.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatterResponseCache {
    pub entries: BTreeMap<String, String>,
}

impl FormatterResponseCache {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let err = |message: String| FormatError::Cache {
            path: path.to_path_buf(),
            message,
        };
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let err = |message: String| FormatError::Cache {
            path: path.to_path_buf(),
            message,
        };
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| err(e.to_string()))?;
        let body = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        tmp.write_all(body.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| err(e.to_string()))?;
        tmp.persist(path).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Returns `false` and leaves the cache untouched if `key` is already present.
    pub fn insert(&mut self, key: String, response: String) -> bool {
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, response);
        true
    }
}

/// The five components parsed from a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseComponents {
    pub domain: String,
    pub purpose: String,
    pub capability: String,
    pub ai_user: String,
    pub ai_subject: String,
}

const LABELS: [&str; 5] = ["domain", "purpose", "capability", "ai user", "ai subject"];

fn strip_decoration(line: &str) -> &str {
    line.trim()
        .trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c == '#' || c.is_whitespace())
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['.', ')'])
        .trim()
}

/// Parses a labeled five-line answer. Labels are case-insensitive and may carry
/// list bullets or markdown emphasis; each must appear exactly once.
pub fn parse_response(raw: &str) -> Result<UseComponents, String> {
    let mut found: [Option<String>; 5] = Default::default();
    for line in raw.lines() {
        let line = strip_decoration(line);
        let Some((label, value)) = line.split_once(':') else {
            continue;
        };
        let label = label.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
        let label = label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let Some(slot) = LABELS.iter().position(|l| *l == label) else {
            continue;
        };
        if found[slot].is_some() {
            return Err(format!("label `{}` appears more than once", LABELS[slot]));
        }
        let value = value
            .trim()
            .trim_matches(|c: char| c == '*' || c == '_')
            .trim();
        if value.is_empty() {
            return Err(format!("label `{}` has no value", LABELS[slot]));
        }
        found[slot] = Some(cap_length(value, LABELS[slot]));
    }
    let missing: Vec<&str> = LABELS
        .iter()
        .zip(&found)
        .filter(|(_, v)| v.is_none())
        .map(|(l, _)| *l)
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing label(s): {}", missing.join(", ")));
    }
    let [domain, purpose, capability, ai_user, ai_subject] = found.map(Option::unwrap);
    Ok(UseComponents {
        domain,
        purpose,
        capability,
        ai_user,
        ai_subject,
    })
}

/// Truncates at the last word boundary within [`MAX_COMPONENT_CHARS`].
fn cap_length(value: &str, label: &str) -> String {
    if value.chars().count() <= MAX_COMPONENT_CHARS {
        return value.to_string();
    }
    let cut: String = value.chars().take(MAX_COMPONENT_CHARS).collect();
    let next_is_break = value
        .chars()
        .nth(MAX_COMPONENT_CHARS)
        .is_some_and(char::is_whitespace);
    let truncated = if next_is_break {
        cut.trim_end().to_string()
    } else {
        match cut.rfind(char::is_whitespace) {
            Some(pos) if pos > 0 => cut[..pos].trim_end().to_string(),
            _ => cut,
        }
    };
    tracing::warn!(
        label,
        original_chars = value.chars().count(),
        "component truncated to {} characters",
        truncated.chars().count()
    );
    truncated
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// Something that answers a chat conversation with a single text reply.
pub trait CompletionClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, FormatError>;
}

/// Blocking client for chat-completion-shaped HTTP endpoints.
///
/// Sends `{"model", "messages", "temperature": 0}` and reads
/// `choices[0].message.content` from the reply.
pub struct HttpCompletionClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    max_retries: u32,
    api_key: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(endpoint: &str, model: &str, timeout: Duration, max_retries: u32) -> Result<Self, FormatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| FormatError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            max_retries,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, (bool, String)> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut request = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("endpoint returned {status}")));
        }
        let value: serde_json::Value = response.json().map_err(|e| (false, e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| (false, "reply has no choices[0].message.content".to_string()))
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, FormatError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(messages) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    if !retryable || attempts > self.max_retries {
                        return Err(FormatError::Transport { attempts, message });
                    }
                    tracing::warn!(attempts, %message, "completion request failed, retrying");
                    std::thread::sleep(Duration::from_millis(100 * u64::from(attempts)));
                }
            }
        }
    }
}

/// Drafts produced by a batch, plus the incidents they were drawn from.
/// This is the file a human reviewer edits before annotation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftSet {
    pub drafts: Vec<UseDraft>,
    pub incidents: Vec<IncidentRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub index: usize,
    pub incident_id: u64,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    pub drafts: DraftSet,
    pub failures: Vec<BatchFailure>,
}

pub struct Formatter {
    config: FormatterConfig,
    cache: FormatterResponseCache,
    client: Option<Box<dyn CompletionClient>>,
}

impl Formatter {
    /// Validates the configuration and loads the cache. Live mode gets an
    /// [`HttpCompletionClient`] built from the configuration.
    pub fn new(config: FormatterConfig) -> Result<Self, FormatError> {
        config.validate()?;
        let client: Option<Box<dyn CompletionClient>> = match config.mode {
            FormatterMode::Live => Some(Box::new(HttpCompletionClient::new(
                config.endpoint_url.as_deref().unwrap_or_default(),
                config.model_name.as_deref().unwrap_or_default(),
                Duration::from_secs(config.timeout_secs),
                config.max_retries,
            )?)),
            FormatterMode::Replay => None,
        };
        let cache = FormatterResponseCache::load(&config.cache_path)?;
        Ok(Self {
            config,
            cache,
            client,
        })
    }

    /// Live-mode formatter with a caller-supplied client.
    pub fn with_client(config: FormatterConfig, client: Box<dyn CompletionClient>) -> Result<Self, FormatError> {
        config.validate()?;
        let cache = FormatterResponseCache::load(&config.cache_path)?;
        Ok(Self {
            config,
            cache,
            client: Some(client),
        })
    }

    pub fn cache(&self) -> &FormatterResponseCache {
        &self.cache
    }

    pub fn format_incident(&mut self, incident: &IncidentRecord) -> Result<UseComponents, FormatError> {
        let key = request_key(incident.incident_id, &self.config.prompt_template);
        if let Some(raw) = self.cache.get(&key) {
            return parse_response(raw).map_err(|reason| FormatError::Parse {
                reason,
                raw: raw.to_string(),
            });
        }
        let client = match (&self.client, self.config.mode) {
            (Some(client), FormatterMode::Live) => client,
            _ => {
                return Err(FormatError::CacheMiss {
                    incident_id: incident.incident_id,
                    key,
                })
            }
        };

        let prompt = render_prompt(&self.config.prompt_template, incident);
        let mut messages = vec![ChatMessage::new("user", prompt)];
        let first = client.complete(&messages)?;
        let (raw, parsed) = match parse_response(&first) {
            Ok(parsed) => (first, parsed),
            Err(reason) => {
                tracing::warn!(incident_id = incident.incident_id, %reason, "reprompting after unparseable response");
                messages.push(ChatMessage::new("assistant", first));
                messages.push(ChatMessage::new("user", REPROMPT));
                let second = client.complete(&messages)?;
                match parse_response(&second) {
                    Ok(parsed) => (second, parsed),
                    Err(reason) => return Err(FormatError::Parse { reason, raw: second }),
                }
            }
        };
        if self.cache.insert(key, raw) {
            self.cache.save(&self.config.cache_path)?;
        }
        Ok(parsed)
    }

    /// Formats incidents in input order. Failures are reported per item; use
    /// ids are assigned to successful drafts in output order.
    pub fn format_batch(&mut self, incidents: &[IncidentRecord]) -> BatchOutcome {
        let mut outcome = BatchOutcome::default();
        for (index, incident) in incidents.iter().enumerate() {
            match self.format_incident(incident) {
                Ok(c) => {
                    let ordinal = outcome.drafts.drafts.len() + 1;
                    outcome.drafts.drafts.push(UseDraft {
                        use_id: use_id_for_ordinal(ordinal),
                        incident_ids: vec![incident.incident_id],
                        domain: normalize_label(&c.domain),
                        purpose: c.purpose,
                        capability: c.capability,
                        ai_user: c.ai_user,
                        ai_subject: c.ai_subject,
                    });
                    outcome.drafts.incidents.push(incident.clone());
                }
                Err(e) => {
                    let raw_response = match &e {
                        FormatError::Parse { raw, .. } => Some(raw.clone()),
                        _ => None,
                    };
                    outcome.failures.push(BatchFailure {
                        index,
                        incident_id: incident.incident_id,
                        error: e.to_string(),
                        raw_response,
                    });
                }
            }
        }
        outcome
    }
}
