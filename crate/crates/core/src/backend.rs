//! Completion backends: a live HTTP completion server and a transcript
//! replay store.
//!
//! The HTTP wire format is a single `POST {endpoint}/completion` carrying
//! `{"prompt", "n_predict", "temperature", "stop"}` and answered with
//! `{"content", "stopped_eos"}`, the shape spoken by llama.cpp's server.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable that overrides the completion endpoint.
pub const ENDPOINT_ENV: &str = "YAMLSMITH_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8080";
/// Sampling temperature for live runs when none is configured.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("cannot connect to {endpoint}: {cause}")]
    Connection { endpoint: String, cause: String },
    #[error("request to {endpoint} timed out: {cause}")]
    Timeout { endpoint: String, cause: String },
    #[error("{endpoint} answered HTTP {status}")]
    Status { endpoint: String, status: u16 },
    #[error("malformed response body from {endpoint}: {cause}")]
    MalformedBody { endpoint: String, cause: String },
    #[error("transport error talking to {endpoint}: {cause}")]
    Transport { endpoint: String, cause: String },
    #[error("cannot read transcripts {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed transcript record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("no transcript for prompt digest {digest}")]
    NotFound { digest: PromptDigest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub stop_markers: Vec<String>,
    pub model_name: String,
    /// Which recorded attempt to replay when several share a prompt (1-based).
    /// Ignored by live backends.
    #[serde(default)]
    pub attempt: Option<u32>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: 512,
            temperature: DEFAULT_TEMPERATURE,
            stop_markers: Vec::new(),
            model_name: model_name.into(),
            attempt: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub model_name: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl ModelResponse {
    /// A response that never reached the model. Scoring treats it as failed.
    pub fn failed(model_name: impl Into<String>) -> Self {
        Self {
            text: String::new(),
            model_name: model_name.into(),
            finish_reason: FinishReason::Error,
            latency_ms: 0,
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    prompt: &'a str,
    n_predict: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionReply {
    content: String,
    #[serde(default)]
    stopped_eos: bool,
    #[serde(default)]
    stopped_word: bool,
}

/// Client for a llama.cpp-style completion server.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    /// Endpoint from [`ENDPOINT_ENV`] if set, otherwise `fallback`.
    pub fn endpoint_from_env(fallback: &str) -> String {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .unwrap_or_else(|| fallback.to_string())
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let url = format!("{}/completion", self.endpoint);
        let body = CompletionBody {
            prompt: &request.prompt,
            n_predict: request.max_new_tokens,
            temperature: request.temperature,
            stop: &request.stop_markers,
        };
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| self.classify(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { endpoint: self.endpoint.clone(), status });
        }
        let raw = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => self.classify(e),
            other => BackendError::MalformedBody { endpoint: self.endpoint.clone(), cause: other.to_string() },
        })?;
        let reply: CompletionReply = serde_json::from_str(&raw).map_err(|e| BackendError::MalformedBody {
            endpoint: self.endpoint.clone(),
            cause: e.to_string(),
        })?;
        let finish_reason = if reply.stopped_eos || reply.stopped_word {
            FinishReason::Stop
        } else {
            FinishReason::Length
        };
        Ok(ModelResponse {
            text: reply.content,
            model_name: request.model_name.clone(),
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn classify(&self, err: ureq::Error) -> BackendError {
        let endpoint = self.endpoint.clone();
        let cause = err.to_string();
        match err {
            ureq::Error::Timeout(_) => BackendError::Timeout { endpoint, cause },
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                BackendError::Timeout { endpoint, cause }
            }
            ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => BackendError::Connection { endpoint, cause },
            ureq::Error::Io(ref io)
                if matches!(
                    io.kind(),
                    std::io::ErrorKind::ConnectionRefused
                        | std::io::ErrorKind::ConnectionReset
                        | std::io::ErrorKind::ConnectionAborted
                        | std::io::ErrorKind::NotConnected
                        | std::io::ErrorKind::AddrNotAvailable
                ) =>
            {
                BackendError::Connection { endpoint, cause }
            }
            ureq::Error::StatusCode(status) => BackendError::Status { endpoint, status },
            _ => BackendError::Transport { endpoint, cause },
        }
    }
}

/// POST `request` to `endpoint` with the default timeout.
pub fn complete(request: &GenerationRequest, endpoint: &str) -> Result<ModelResponse, BackendError> {
    HttpBackend::new(endpoint, DEFAULT_TIMEOUT).complete(request)
}

/// SHA-256 of the exact prompt bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptDigest([u8; 32]);

impl PromptDigest {
    pub fn of(prompt: &str) -> Self {
        let out = Sha256::digest(prompt.as_bytes());
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for PromptDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// One record of the transcript file, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub annexe: u32,
    pub tir: u32,
    pub model: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub annexe: u32,
    pub tir: u32,
    pub prompt: String,
    pub digest: PromptDigest,
    pub response: ModelResponse,
}

impl TranscriptEntry {
    /// Stable identifier, e.g. `annexe4.tir2`.
    pub fn fixture_id(&self) -> String {
        format!("annexe{}.tir{}", self.annexe, self.tir)
    }
}

/// Recorded prompt/response pairs, immutable once loaded.
#[derive(Debug, Clone, Default)]
pub struct TranscriptStore {
    entries: Vec<TranscriptEntry>,
    by_digest: HashMap<PromptDigest, Vec<usize>>,
    source_path: PathBuf,
}

/// Undo the `\'` and `\t` escapes left in transcripts by typesetting.
pub fn unescape_transcript(text: &str) -> String {
    text.replace("\\'", "'").replace("\\t", "\t")
}

impl TranscriptStore {
    pub fn from_records<I>(records: I, source_path: impl Into<PathBuf>) -> Self
    where
        I: IntoIterator<Item = TranscriptRecord>,
    {
        let mut store = TranscriptStore { source_path: source_path.into(), ..Default::default() };
        for rec in records {
            store.push(rec);
        }
        store
    }

    fn push(&mut self, rec: TranscriptRecord) {
        let prompt = unescape_transcript(&rec.prompt);
        let digest = PromptDigest::of(&prompt);
        let entry = TranscriptEntry {
            annexe: rec.annexe,
            tir: rec.tir,
            prompt,
            digest,
            response: ModelResponse {
                text: unescape_transcript(&rec.response),
                model_name: rec.model,
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
            },
        };
        self.by_digest.entry(digest).or_default().push(self.entries.len());
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn get(&self, fixture_id: &str) -> Option<&TranscriptEntry> {
        self.entries.iter().find(|e| e.fixture_id() == fixture_id)
    }

    /// A store holding only the entries accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&TranscriptEntry) -> bool) -> TranscriptStore {
        let mut out = TranscriptStore { source_path: self.source_path.clone(), ..Default::default() };
        for entry in self.entries.iter().filter(|e| keep(e)) {
            out.by_digest.entry(entry.digest).or_default().push(out.entries.len());
            out.entries.push(entry.clone());
        }
        out
    }

    /// Entries recorded for exactly these prompt bytes, in file order.
    pub fn lookup(&self, prompt: &str) -> impl Iterator<Item = &TranscriptEntry> {
        self.by_digest
            .get(&PromptDigest::of(prompt))
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }
}

/// Load a JSON Lines transcript file. Blank lines are skipped.
pub fn load_transcripts(path: impl AsRef<Path>) -> Result<TranscriptStore, BackendError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io { path: path.to_path_buf(), source })?;
    parse_transcripts(&text, path)
}

pub fn parse_transcripts(text: &str, path: &Path) -> Result<TranscriptStore, BackendError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| BackendError::MalformedRecord { path: path.to_path_buf(), line: idx + 1, reason };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("record is not a JSON object".into()))?;
        if !obj.get("prompt").is_some_and(|v| v.is_string()) {
            return Err(malformed("missing prompt".into()));
        }
        if !obj.get("response").is_some_and(|v| v.is_string()) {
            return Err(malformed("prompt has no response".into()));
        }
        let rec: TranscriptRecord = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        records.push(rec);
    }
    Ok(TranscriptStore::from_records(records, path))
}

/// Answer `request` from the store by exact prompt digest.
///
/// When several recordings share the prompt, those whose model matches
/// `request.model_name` are preferred, and `request.attempt` picks among them
/// by Tir number (the first one when unset).
pub fn replay_complete(request: &GenerationRequest, store: &TranscriptStore) -> Result<ModelResponse, BackendError> {
    let digest = PromptDigest::of(&request.prompt);
    let not_found = || BackendError::NotFound { digest };
    let hits: Vec<&TranscriptEntry> = store.lookup(&request.prompt).collect();
    if hits.is_empty() {
        return Err(not_found());
    }
    let same_model: Vec<&TranscriptEntry> =
        hits.iter().copied().filter(|e| e.response.model_name == request.model_name).collect();
    let pool = if same_model.is_empty() { hits } else { same_model };
    let entry = match request.attempt {
        Some(tir) => pool.into_iter().find(|e| e.tir == tir).ok_or_else(not_found)?,
        None => pool[0],
    };
    let mut response = entry.response.clone();
    response.finish_reason = FinishReason::Stop;
    response.latency_ms = 0;
    Ok(response)
}
