//! Uniform envelope for every model invocation.
//!
//! All LLM traffic flows through a [`Backend`] and is recorded by a
//! per-run [`Session`], which owns the token ledger, the call counter and
//! the event trace. Two backends ship: [`ScriptedBackend`] replays a JSONL
//! script deterministically, [`LiveBackend`] talks to any OpenAI-compatible
//! chat-completions endpoint.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{EventKind, TraceEvent};

pub const ENV_API_BASE: &str = "REFLECT_API_BASE";
pub const ENV_MODEL: &str = "REFLECT_MODEL";
pub const ENV_API_KEY: &str = "REFLECT_API_KEY";

/// Default completion budget per call. Not a published value; override per run.
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("script exhausted: no reply queued for call {call_index} ({purpose})")]
    ScriptExhausted { call_index: u64, purpose: Purpose },
    #[error("malformed script line {line}: {message}")]
    BadScript { line: usize, message: String },
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64, max_tokens: u32) -> Result<Self, GatewayError> {
        let params = Self {
            temperature,
            top_p,
            max_tokens,
            stop_sequences: Vec::new(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Sampling at `temperature` with top-p 1.0 and the default token budget.
    pub fn at(temperature: f64) -> Self {
        Self {
            temperature,
            top_p: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidParams(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Generate,
    Extract,
    Inspect,
    Verify,
    Critique,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Generate => "generate",
            Purpose::Extract => "extract",
            Purpose::Inspect => "inspect",
            Purpose::Verify => "verify",
            Purpose::Critique => "critique",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCall {
    pub prompt: String,
    pub params: SamplingParams,
    pub call_index: u64,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ModelReply {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call_index: u64,
    pub purpose: Purpose,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Append-only record of token usage for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    entries: Vec<LedgerEntry>,
}

impl TokenLedger {
    pub fn record(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.completion_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens() + self.completion_tokens()
    }

    pub fn count(&self, purpose: Purpose) -> usize {
        self.entries.iter().filter(|e| e.purpose == purpose).count()
    }

    /// Total tokens per purpose tag.
    pub fn by_purpose(&self) -> BTreeMap<Purpose, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.purpose).or_insert(0) += e.prompt_tokens + e.completion_tokens;
        }
        out
    }
}

/// The single seam through which model calls flow.
pub trait Backend: Send + Sync {
    fn generate(&self, call: &ModelCall) -> Result<ModelReply, GatewayError>;

    fn model_name(&self) -> &str;
}

/// Whitespace-token estimate used whenever a backend does not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub purpose: Option<Purpose>,
    pub reply: String,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

impl ScriptEntry {
    pub fn reply(purpose: Purpose, text: impl Into<String>) -> Self {
        Self {
            purpose: Some(purpose),
            reply: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn any(text: impl Into<String>) -> Self {
        Self {
            purpose: None,
            reply: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn with_tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }
}

/// Deterministic backend replaying queued replies.
///
/// A call consumes the first unconsumed entry whose purpose matches the call's
/// purpose; entries without a purpose match any call.
#[derive(Debug)]
pub struct ScriptedBackend {
    queue: Mutex<Vec<(ScriptEntry, bool)>>,
    name: String,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            queue: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
            name: "scripted".to_string(),
        }
    }

    /// Every reply answers any purpose, in order.
    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(ScriptEntry::any).collect())
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| GatewayError::BadScript {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        Self::parse_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue
            .lock()
            .expect("script queue poisoned")
            .iter()
            .filter(|(_, used)| !used)
            .count()
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, call: &ModelCall) -> Result<ModelReply, GatewayError> {
        let mut queue = self.queue.lock().expect("script queue poisoned");
        let slot = queue
            .iter_mut()
            .find(|(e, used)| !*used && e.purpose.map_or(true, |p| p == call.purpose));
        let Some((entry, used)) = slot else {
            return Err(GatewayError::ScriptExhausted {
                call_index: call.call_index,
                purpose: call.purpose,
            });
        };
        *used = true;
        Ok(ModelReply {
            text: entry.reply.clone(),
            prompt_tokens: entry
                .prompt_tokens
                .unwrap_or_else(|| estimate_tokens(&call.prompt)),
            completion_tokens: entry
                .completion_tokens
                .unwrap_or_else(|| estimate_tokens(&entry.reply)),
        })
    }

    fn model_name(&self) -> &str {
        &self.name
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    max_attempts: u32,
    initial_backoff: Duration,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .expect("http client"),
            max_attempts: 4,
            initial_backoff: Duration::from_secs(1),
            seed: None,
        }
    }

    /// Reads `REFLECT_API_BASE`, `REFLECT_MODEL` and `REFLECT_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| GatewayError::NotConfigured(format!("{ENV_API_BASE} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| GatewayError::NotConfigured(format!("{ENV_MODEL} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(base, model, key))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Initial attempt plus `retries` transport retries, doubling the delay each time.
    pub fn with_retry_policy(mut self, retries: u32, initial_backoff: Duration) -> Self {
        self.max_attempts = retries + 1;
        self.initial_backoff = initial_backoff;
        self
    }

    fn endpoint(&self) -> String {
        if self.base_url.ends_with("/chat/completions") {
            self.base_url.clone()
        } else {
            format!("{}/chat/completions", self.base_url)
        }
    }

    fn attempt(&self, call: &ModelCall) -> Result<ModelReply, String> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &call.prompt,
            }],
            temperature: call.params.temperature,
            top_p: call.params.top_p,
            max_tokens: call.params.max_tokens,
            stop: &call.params.stop_sequences,
            seed: self.seed,
        };
        let mut req = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>()));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| e.to_string())?;
        // A refusal or empty choice list is a valid empty reply.
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (estimate_tokens(&call.prompt), estimate_tokens(&text)),
        };
        Ok(ModelReply {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}

impl Backend for LiveBackend {
    fn generate(&self, call: &ModelCall) -> Result<ModelReply, GatewayError> {
        let mut delay = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.attempt(call) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "chat completion failed");
                    last = e;
                }
            }
            if attempt < self.max_attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(GatewayError::Transport {
            attempts: self.max_attempts,
            message: last,
        })
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Per-run call context: assigns call indices, keeps the ledger and trace.
///
/// A session is confined to one worker; the backend behind it may be shared.
pub struct Session<'b> {
    backend: &'b dyn Backend,
    ledger: TokenLedger,
    trace: Vec<TraceEvent>,
    next_index: u64,
    step: u32,
}

impl<'b> Session<'b> {
    pub fn new(backend: &'b dyn Backend) -> Self {
        Self {
            backend,
            ledger: TokenLedger::default(),
            trace: Vec::new(),
            next_index: 0,
            step: 0,
        }
    }

    pub fn backend(&self) -> &'b dyn Backend {
        self.backend
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn calls_made(&self) -> u64 {
        self.next_index
    }

    /// Step number stamped onto subsequent trace events.
    pub fn set_step(&mut self, step: u32) {
        self.step = step;
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn event(&mut self, kind: EventKind, text: impl Into<String>) {
        self.trace.push(TraceEvent::new(self.step, kind, text));
    }

    pub fn event_with(&mut self, kind: EventKind, text: impl Into<String>, data: serde_json::Value) {
        self.trace
            .push(TraceEvent::new(self.step, kind, text).with_data(data));
    }

    /// Issues one model call and records it in the ledger and trace.
    pub fn generate(
        &mut self,
        prompt: &str,
        params: &SamplingParams,
        purpose: Purpose,
    ) -> Result<ModelReply, GatewayError> {
        params.validate()?;
        let call = ModelCall {
            prompt: prompt.to_string(),
            params: params.clone(),
            call_index: self.next_index,
            purpose,
        };
        self.next_index += 1;
        let reply = self.backend.generate(&call)?;
        self.ledger.record(LedgerEntry {
            call_index: call.call_index,
            purpose,
            prompt_tokens: reply.prompt_tokens,
            completion_tokens: reply.completion_tokens,
        });
        let mut ev = TraceEvent::new(self.step, EventKind::LlmCall, reply.text.clone());
        ev.purpose = Some(purpose);
        ev.call_index = Some(call.call_index);
        self.trace.push(ev);
        Ok(reply)
    }

    /// Draws `k` independent samples of the same prompt, ordered by call index.
    pub fn draw_k_samples(
        &mut self,
        prompt: &str,
        params: &SamplingParams,
        k: usize,
    ) -> Result<Vec<ModelReply>, GatewayError> {
        if k == 0 {
            return Err(GatewayError::InvalidParams("k must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            out.push(self.generate(prompt, params, Purpose::Generate)?);
        }
        Ok(out)
    }

    /// Consumes the session, returning its ledger and trace.
    pub fn finish(self) -> (TokenLedger, Vec<TraceEvent>) {
        (self.ledger, self.trace)
    }
}
