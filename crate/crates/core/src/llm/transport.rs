use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::message::{ChatRequest, IdDigests, ImageSource};
use super::TransportError;

pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub response_text: String,
    /// Seconds since the Unix epoch at record time.
    pub timestamp: u64,
    /// Canonical request, kept so replay misses can point at the closest entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
}

pub fn load_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptEntry>, TransportError> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| TransportError::Transcript(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e| TransportError::Transcript(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
            TransportError::Transcript(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Answers from a transcript only; never touches the network.
pub struct ReplayTransport {
    entries: HashMap<String, TranscriptEntry>,
    images: Arc<dyn ImageSource>,
}

impl ReplayTransport {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        Self::from_entries(load_transcript(path)?, Arc::new(IdDigests))
    }

    pub fn open_with_images(
        path: impl AsRef<Path>,
        images: Arc<dyn ImageSource>,
    ) -> Result<Self, TransportError> {
        Self::from_entries(load_transcript(path)?, images)
    }

    pub fn from_entries(
        entries: Vec<TranscriptEntry>,
        images: Arc<dyn ImageSource>,
    ) -> Result<Self, TransportError> {
        let mut map = HashMap::with_capacity(entries.len());
        for e in entries {
            if map.contains_key(&e.digest) {
                return Err(TransportError::Transcript(format!(
                    "duplicate digest {}",
                    e.digest
                )));
            }
            map.insert(e.digest.clone(), e);
        }
        Ok(Self {
            entries: map,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn nearest(&self, canonical: &str) -> Option<String> {
        let want: HashSet<&str> = canonical.split_whitespace().collect();
        self.entries
            .values()
            .filter_map(|e| e.request.as_deref().map(|r| (e, r)))
            .map(|(e, r)| {
                let have: HashSet<&str> = r.split_whitespace().collect();
                let inter = want.intersection(&have).count() as f64;
                let union = want.union(&have).count().max(1) as f64;
                (inter / union, e, r)
            })
            // highest similarity, then smallest digest for a stable answer
            .max_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| b.1.digest.cmp(&a.1.digest))
            })
            .map(|(_, e, r)| {
                let preview: String = r.chars().take(160).collect();
                format!("{} {preview}", e.digest)
            })
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let digest = request.digest(self.images.as_ref());
        match self.entries.get(&digest) {
            Some(e) => Ok(e.response_text.clone()),
            None => Err(TransportError::ReplayMiss {
                nearest: self.nearest(&request.canonical(self.images.as_ref())),
                digest,
            }),
        }
    }
}

/// Forwards to `inner` and appends each new exchange to a transcript file.
pub struct RecordingTransport {
    inner: Box<dyn Transport>,
    images: Arc<dyn ImageSource>,
    path: PathBuf,
    state: Mutex<(File, BTreeSet<String>)>,
}

impl RecordingTransport {
    pub fn new(inner: Box<dyn Transport>, path: impl AsRef<Path>) -> Result<Self, TransportError> {
        Self::with_images(inner, path, Arc::new(IdDigests))
    }

    pub fn with_images(
        inner: Box<dyn Transport>,
        path: impl AsRef<Path>,
        images: Arc<dyn ImageSource>,
    ) -> Result<Self, TransportError> {
        let path = path.as_ref().to_path_buf();
        let known: BTreeSet<String> = if path.exists() {
            load_transcript(&path)?
                .into_iter()
                .map(|e| e.digest)
                .collect()
        } else {
            BTreeSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TransportError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            images,
            path,
            state: Mutex::new((file, known)),
        })
    }
}

impl Transport for RecordingTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let response = self.inner.complete(request)?;
        let canonical = request.canonical(self.images.as_ref());
        let digest = request.digest(self.images.as_ref());
        let mut guard = self.state.lock().expect("transcript lock");
        let (file, known) = &mut *guard;
        if known.insert(digest.clone()) {
            let entry = TranscriptEntry {
                digest,
                response_text: response.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                request: Some(canonical),
            };
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| TransportError::Transcript(format!("{}: {e}", self.path.display())))?;
        }
        Ok(response)
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

/// In-process transport driven by a closure. Counts calls and keeps every
/// request it saw.
pub struct ScriptedTransport {
    responder: Box<Responder>,
    calls: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Returns `responses` in order, then fails.
    pub fn sequence(responses: Vec<String>) -> Self {
        let next = AtomicUsize::new(0);
        Self::from_fn(move |_| {
            let i = next.fetch_add(1, Ordering::SeqCst);
            responses
                .get(i)
                .cloned()
                .ok_or_else(|| TransportError::Unavailable("script exhausted".into()))
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("request log").clone()
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().expect("request log").push(request.clone());
        (self.responder)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            api_key: String::new(),
            temperature: 0.0,
            timeout_secs: 120,
        }
    }
}

impl LiveConfig {
    /// Reads `CHAT_BASE_URL`, `CHAT_MODEL` and `CHAT_API_KEY`.
    pub fn from_env() -> Result<Self, TransportError> {
        let var = |k: &str| {
            std::env::var(k).map_err(|_| TransportError::Config(format!("{k} is not set")))
        };
        Ok(Self {
            base_url: var("CHAT_BASE_URL")?,
            model: var("CHAT_MODEL")?,
            api_key: var("CHAT_API_KEY")?,
            ..Default::default()
        })
    }
}

/// Generic chat-completions client (`POST {base_url}/chat/completions`).
pub struct LiveTransport {
    cfg: LiveConfig,
    client: reqwest::blocking::Client,
    images: Arc<dyn ImageSource>,
}

fn mime_for(id: &str) -> &'static str {
    let lower = id.to_ascii_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "image/jpeg"
    }
}

impl LiveTransport {
    pub fn new(cfg: LiveConfig, images: Arc<dyn ImageSource>) -> Result<Self, TransportError> {
        if cfg.base_url.is_empty() || cfg.model.is_empty() {
            return Err(TransportError::Config(
                "base_url and model are required".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            client,
            images,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                if m.image_ids.is_empty() {
                    return serde_json::json!({"role": m.role.as_str(), "content": m.text});
                }
                let mut parts = Vec::new();
                if !m.text.is_empty() {
                    parts.push(serde_json::json!({"type": "text", "text": m.text}));
                }
                for id in &m.image_ids {
                    match self.images.load(id) {
                        Some(bytes) => {
                            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                            parts.push(serde_json::json!({
                                "type": "image_url",
                                "image_url": {"url": format!("data:{};base64,{b64}", mime_for(id))}
                            }));
                        }
                        None => parts.push(serde_json::json!({"type": "text", "text": id})),
                    }
                }
                serde_json::json!({"role": m.role.as_str(), "content": parts})
            })
            .collect();
        serde_json::json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": messages,
        })
    }
}

impl Transport for LiveTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let url = format!(
            "{}/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        );
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.cfg.api_key)
            .json(&self.request_body(request))
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, body });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| TransportError::Malformed(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
    }
}
