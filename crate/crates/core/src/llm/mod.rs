//! Two-stage LLM orchestration over a pluggable chat transport.
//!
//! The transport is either a live chat-completions endpoint, a recorder that
//! wraps another transport and appends every exchange to a transcript, or a
//! replayer that answers purely from a transcript. Requests are keyed by a
//! SHA-256 digest of their canonical form, so replay is offline and exact.

mod message;
mod pipeline;
mod prompts;
mod retry;
mod transport;

pub use message::{ChatMessage, ChatRequest, DirectoryImages, IdDigests, ImageSource, Role};
pub use pipeline::{
    extract_label_from_discussion, normalize_extracted_label, parse_answer_line, run_pipeline,
    trim_final_label, Orchestrator, PipelineOutput, Scenario, ScenarioConfig,
};
pub use prompts::PromptSet;
pub use retry::{call_with_retry, NoSleep, RecordingSleeper, RetryPolicy, Sleeper, ThreadSleeper};
pub use transport::{
    load_transcript, LiveConfig, LiveTransport, RecordingTransport, ReplayTransport,
    ScriptedTransport, TranscriptEntry, Transport,
};

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("network error: {0}")]
    Network(String),

    #[error("service unavailable: {0}")]
    Unavailable(String),

    #[error("no recorded response for request {digest}{}", nearest_hint(.nearest))]
    ReplayMiss {
        digest: String,
        nearest: Option<String>,
    },

    #[error("empty response from transport")]
    EmptyResponse,

    #[error("malformed endpoint response: {0}")]
    Malformed(String),

    #[error("transcript error: {0}")]
    Transcript(String),

    #[error("live transport misconfigured: {0}")]
    Config(String),
}

fn nearest_hint(nearest: &Option<String>) -> String {
    match nearest {
        Some(n) => format!("; nearest recorded request: {n}"),
        None => String::new(),
    }
}

impl TransportError {
    /// Whether another attempt could succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Http { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) | TransportError::Unavailable(_) => true,
            _ => false,
        }
    }
}
