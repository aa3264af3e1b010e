//! Role-routed multimodal LLM access.
//!
//! Every pipeline stage talks to models through [`LlmGateway`]: it resolves a
//! [`Role`] to the configured model, keeps per-session append-only memory,
//! retries transport failures with exponential backoff, and meters tokens and
//! cost per role in integer micro-dollars.
//!
//! A model identifier of the form `fake:<script-path>` routes to the
//! deterministic scripted provider in [`fake`], which is how the entire
//! pipeline runs offline in tests and demos. Anything else is treated as a
//! chat-completions style HTTP endpoint handled by [`http`].

pub mod fake;
pub mod http;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;
use crate::config::{Config, LlmConfig, ModelPrice, ModelRole, ModelRoles};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("role {0:?} cannot be used here")]
    UnknownRole(Role),
    #[error("transport failure: {message}")]
    Transport { message: String },
    #[error("provider refused the request: {message}")]
    Refusal { message: String },
    #[error("fake script {script} has no reply left for this prompt")]
    ScriptExhausted { script: PathBuf },
    #[error("fake script {script}: {message}")]
    Script { script: PathBuf, message: String },
    #[error("provider misconfigured: {message}")]
    Misconfigured { message: String },
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

/// One consumer of model capacity. Chat roles each map to a configured
/// model; `Embedding` is only valid for [`LlmGateway::embed`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Executor,
    Detector,
    Filter,
    Classifier,
    Embedding,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Generator,
        Role::Executor,
        Role::Detector,
        Role::Filter,
        Role::Classifier,
        Role::Embedding,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Executor => "executor",
            Role::Detector => "detector",
            Role::Filter => "filter",
            Role::Classifier => "classifier",
            Role::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

impl std::fmt::Display for ChatRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One message part: text, or a reference to an image file. The content hash
/// is captured at construction so downstream consumers (fake provider,
/// audit log) never depend on the file staying in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { path: PathBuf, sha256_16: String },
}

impl Part {
    pub fn text(text: impl Into<String>) -> Self {
        Part::Text { text: text.into() }
    }

    /// Reads and hashes the image file now.
    pub fn image(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let bytes = std::fs::read(&path)?;
        Ok(Part::Image {
            path,
            sha256_16: hash16(&bytes),
        })
    }
}

/// First 16 hex characters of the SHA-256 of `bytes`; the identity used for
/// images everywhere in this crate.
pub fn hash16(bytes: &[u8]) -> String {
    use sha2::Digest;
    let digest = sha2::Sha256::digest(bytes);
    let mut out = String::with_capacity(16);
    for b in &digest[..8] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            parts: vec![Part::text(text)],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            parts: vec![Part::text(text)],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            parts: vec![Part::text(text)],
        }
    }

    /// A user message carrying text followed by image attachments. Each
    /// image file is read and hashed immediately.
    pub fn user_with_images<P: AsRef<Path>>(
        text: impl Into<String>,
        images: &[P],
    ) -> std::io::Result<Self> {
        let mut parts = vec![Part::text(text)];
        for image in images {
            parts.push(Part::image(image.as_ref())?);
        }
        Ok(Self {
            role: ChatRole::User,
            parts,
        })
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let Part::Text { text } = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    pub fn image_hashes(&self) -> Vec<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Image { sha256_16, .. } => Some(sha256_16.as_str()),
                Part::Text { .. } => None,
            })
            .collect()
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.parts.is_empty() {
            return Err(LlmError::Transport {
                message: "message must have at least one part".into(),
            });
        }
        if self.role != ChatRole::User && !self.image_hashes().is_empty() {
            return Err(LlmError::Transport {
                message: "images are only allowed in user messages".into(),
            });
        }
        Ok(())
    }
}

/// A dialogue with one role's model. Memory is append-only; serializing and
/// restoring a session reproduces identical subsequent fake-provider replies
/// because the fake derives its state purely from this history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub role: Role,
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl Session {
    /// Appends a system message without a provider round-trip. Used to seed
    /// role prompts before the first send.
    pub fn push_system(&mut self, text: impl Into<String>) {
        self.messages.push(ChatMessage::system(text));
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("session serializes");
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Per-role usage counters. All counters are monotonically non-decreasing
/// within a run; cost is integer micro-dollars so accounting is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub image_count: u64,
    pub cost_micros: u64,
    pub wall_ms: u64,
}

impl RoleUsage {
    fn add(&mut self, other: &RoleUsage) {
        self.requests += other.requests;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.image_count += other.image_count;
        self.cost_micros += other.cost_micros;
        self.wall_ms += other.wall_ms;
    }
}

pub type MeterSnapshot = BTreeMap<Role, RoleUsage>;

/// Thread-safe usage accumulator shared by all sessions of a run.
#[derive(Debug, Default)]
pub struct UsageMeter {
    rows: Mutex<MeterSnapshot>,
}

impl UsageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a meter from a persisted snapshot when resuming a run.
    pub fn from_snapshot(snapshot: MeterSnapshot) -> Self {
        Self {
            rows: Mutex::new(snapshot),
        }
    }

    pub fn record(&self, role: Role, usage: RoleUsage) {
        let mut rows = self.rows.lock().expect("meter lock");
        rows.entry(role).or_default().add(&usage);
    }

    pub fn snapshot(&self) -> MeterSnapshot {
        self.rows.lock().expect("meter lock").clone()
    }

    pub fn total_cost_micros(&self) -> u64 {
        self.snapshot().values().map(|u| u.cost_micros).sum()
    }
}

fn cost_micros(price: &ModelPrice, input_tokens: u64, output_tokens: u64, images: u64) -> u64 {
    input_tokens * price.input_per_mtok_micros / 1_000_000
        + output_tokens * price.output_per_mtok_micros / 1_000_000
        + images * price.per_image_micros
}

/// What a provider returns for one chat round-trip.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Uniform gateway over the fake and HTTP providers.
pub struct LlmGateway {
    roles: ModelRoles,
    llm_cfg: LlmConfig,
    pricing: BTreeMap<String, ModelPrice>,
    fake: fake::FakeProvider,
    http: http::HttpProvider,
    meter: Arc<UsageMeter>,
    clock: SharedClock,
    session_seq: AtomicU64,
    audit: Mutex<Option<std::fs::File>>,
}

impl LlmGateway {
    pub fn new(cfg: &Config, clock: SharedClock) -> Self {
        Self {
            roles: cfg.models.clone(),
            llm_cfg: cfg.llm.clone(),
            pricing: cfg.pricing.clone(),
            fake: fake::FakeProvider::new(cfg.models.embedding_dim as usize),
            http: http::HttpProvider::new(),
            meter: Arc::new(UsageMeter::new()),
            clock,
            session_seq: AtomicU64::new(0),
            audit: Mutex::new(None),
        }
    }

    /// Replaces the meter, used when resuming a run with persisted counters.
    pub fn restore_meter(&mut self, meter: Arc<UsageMeter>) {
        self.meter = meter;
    }

    pub fn meter(&self) -> Arc<UsageMeter> {
        Arc::clone(&self.meter)
    }

    /// Turns on raw request/reply audit logging into `dir/llm_audit.jsonl`.
    pub fn enable_audit_log(&self, dir: &Path) -> std::io::Result<()> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("llm_audit.jsonl"))?;
        *self.audit.lock().expect("audit lock") = Some(file);
        Ok(())
    }

    fn binding(&self, role: Role) -> Result<&ModelRole, LlmError> {
        match role {
            Role::Generator => Ok(&self.roles.generator),
            Role::Executor => Ok(&self.roles.executor),
            Role::Detector => Ok(&self.roles.detector),
            Role::Filter => Ok(&self.roles.filter),
            Role::Classifier => Ok(&self.roles.classifier),
            Role::Embedding => Err(LlmError::UnknownRole(role)),
        }
    }

    /// Opens a session with empty memory bound to the role's model.
    pub fn open_session(&self, role: Role) -> Result<Session, LlmError> {
        let seq = self.session_seq.fetch_add(1, Ordering::Relaxed);
        self.open_named_session(role, &format!("{role}-{seq}"))
    }

    /// Opens a session with a caller-chosen id, so artifacts that mention
    /// sessions stay deterministic across runs.
    pub fn open_named_session(&self, role: Role, session_id: &str) -> Result<Session, LlmError> {
        let binding = self.binding(role)?;
        Ok(Session {
            session_id: session_id.to_string(),
            role,
            model: binding.model.clone(),
            messages: Vec::new(),
        })
    }

    /// Appends `msg`, invokes the provider with the full memory (retrying
    /// transport failures), appends and returns the assistant reply.
    pub fn send(&self, session: &mut Session, msg: ChatMessage) -> Result<ChatMessage, LlmError> {
        msg.validate()?;
        let images = msg.image_hashes().len() as u64;
        session.messages.push(msg);

        let started = Instant::now();
        let reply = self.with_retries(|| {
            if let Some(script) = fake::script_path(&session.model) {
                self.fake.chat(script, &session.messages)
            } else {
                let binding = self.binding(session.role)?;
                self.http.chat(binding, &session.messages)
            }
        })?;

        let price = self.pricing.get(&session.model).copied().unwrap_or_default();
        self.meter.record(
            session.role,
            RoleUsage {
                requests: 1,
                input_tokens: reply.input_tokens,
                output_tokens: reply.output_tokens,
                image_count: images,
                cost_micros: cost_micros(&price, reply.input_tokens, reply.output_tokens, images),
                wall_ms: self.clock.elapsed_ms(started),
            },
        );

        let assistant = ChatMessage::assistant(reply.text);
        self.audit_line(session, &assistant);
        session.messages.push(assistant.clone());
        Ok(assistant)
    }

    /// Embeds each text with the configured embedding model. An empty input
    /// returns an empty output without any provider round-trip.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let binding = &self.roles.embedding;
        let dim = self.roles.embedding_dim as usize;
        let started = Instant::now();
        let vectors = self.with_retries(|| {
            if fake::script_path(&binding.model).is_some() {
                Ok(self.fake.embed(texts))
            } else {
                self.http.embed(binding, texts, dim)
            }
        })?;

        let input_tokens: u64 = texts.iter().map(|t| self.count_tokens(t) as u64).sum();
        let price = self.pricing.get(&binding.model).copied().unwrap_or_default();
        self.meter.record(
            Role::Embedding,
            RoleUsage {
                requests: 1,
                input_tokens,
                output_tokens: 0,
                image_count: 0,
                cost_micros: cost_micros(&price, input_tokens, 0, 0),
                wall_ms: self.clock.elapsed_ms(started),
            },
        );
        Ok(vectors)
    }

    /// Token count used for chunking and budget estimates. Whitespace
    /// splitting keeps counts provider-independent and reproducible.
    pub fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    pub fn embedding_dim(&self) -> usize {
        self.roles.embedding_dim as usize
    }

    fn with_retries<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, LlmError>,
    ) -> Result<T, LlmError> {
        let mut backoff = self.llm_cfg.initial_backoff_ms;
        let mut last_err = None;
        for n in 0..self.llm_cfg.max_attempts.max(1) {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() => {
                    log::warn!("provider attempt {} failed: {e}", n + 1);
                    last_err = Some(e);
                    if n + 1 < self.llm_cfg.max_attempts {
                        std::thread::sleep(std::time::Duration::from_millis(backoff));
                        backoff = backoff.saturating_mul(2);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn audit_line(&self, session: &Session, reply: &ChatMessage) {
        let mut guard = self.audit.lock().expect("audit lock");
        if let Some(file) = guard.as_mut() {
            let record = serde_json::json!({
                "session_id": session.session_id,
                "role": session.role,
                "model": session.model,
                "request": session.messages,
                "reply": reply,
            });
            if let Err(e) = writeln!(file, "{record}") {
                log::warn!("audit log write failed: {e}");
            }
        }
    }
}

/// Outcome of a structured request that allows exactly one repair attempt.
#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unusable model response after repair attempt: {0}")]
    Format(String),
}

/// Sends `msg`, parses the reply with `parse`, and on a parse failure sends
/// one repair message quoting the problem before giving up. Both exchanges
/// stay in the session so the model sees its own invalid output.
pub fn ask_with_repair<T>(
    gateway: &LlmGateway,
    session: &mut Session,
    msg: ChatMessage,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, AskError> {
    let reply = gateway.send(session, msg)?;
    match parse(&reply.text()) {
        Ok(v) => Ok(v),
        Err(problem) => {
            let reply = gateway.send(session, ChatMessage::user(repair_message(&problem)))?;
            parse(&reply.text()).map_err(AskError::Format)
        }
    }
}

/// The standard reprompt sent after an unusable reply.
pub fn repair_message(problem: &str) -> String {
    format!(
        "Your previous response could not be used: {problem}\n\
         Respond again, following the required format exactly."
    )
}

/// Extracts the first fenced code block (``` or ```json) and parses it as
/// JSON. Falls back to parsing the whole reply when no fence is present.
pub fn extract_fenced_json(reply: &str) -> Result<serde_json::Value, String> {
    let body = match reply.find("```") {
        Some(open) => {
            let after = &reply[open + 3..];
            let content_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
            let content = &after[content_start..];
            let close = content
                .find("```")
                .ok_or_else(|| "unterminated code fence".to_string())?;
            &content[..close]
        }
        None => reply,
    };
    serde_json::from_str(body.trim())
        .map_err(|e| format!("response is not valid JSON: {e}"))
}
