use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::message::{ChatMessage, ChatRequest};
use super::prompts::PromptSet;
use super::retry::{call_with_retry, RetryPolicy, Sleeper, ThreadSleeper};
use super::transport::Transport;
use super::TransportError;
use crate::corpus::{normalize_label, Case};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One call: differential plus a trailing `Answer:` line.
    #[serde(rename = "img_1call")]
    Img1Call,
    /// Differential from images, then reformat to a bare name.
    #[serde(rename = "img_2calls")]
    Img2Calls,
    /// Differential from images, then reformat with the query text appended.
    ImgThenText,
    /// Differential from images plus query text, then reformat.
    ImgPlusText,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Img1Call,
        Scenario::Img2Calls,
        Scenario::ImgThenText,
        Scenario::ImgPlusText,
    ];

    pub fn calls(self) -> usize {
        match self {
            Scenario::Img1Call => 1,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Img1Call => "img_1call",
            Scenario::Img2Calls => "img_2calls",
            Scenario::ImgThenText => "img_then_text",
            Scenario::ImgPlusText => "img_plus_text",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// `"builtin"` or a prompt directory.
    pub prompt_set: String,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
    /// Cases processed concurrently.
    pub concurrency: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            scenario: Scenario::Img2Calls,
            prompt_set: "builtin".into(),
            max_attempts: retry.max_attempts,
            backoff_base_ms: retry.backoff_base_ms,
            max_backoff_ms: retry.max_backoff_ms,
            concurrency: 2,
        }
    }
}

impl ScenarioConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            backoff_base_ms: self.backoff_base_ms,
            max_backoff_ms: self.max_backoff_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub final_label: String,
    /// Raw text of every call, in order.
    pub stage_outputs: Vec<String>,
}

/// Text after the last `Answer:` marker (case-insensitive).
pub fn parse_answer_line(text: &str) -> Result<String> {
    for line in text.lines().rev() {
        let lower = line.to_lowercase();
        if let Some(pos) = lower.rfind("answer:") {
            let rest = line[pos + "answer:".len()..]
                .trim()
                .trim_matches('*')
                .trim();
            let rest = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .unwrap_or(rest)
                .trim();
            if !rest.is_empty() {
                return Ok(rest.to_owned());
            }
        }
    }
    Err(Error::MissingAnswer {
        raw: text.to_owned(),
    })
}

/// Trims whitespace and one trailing period; casing is kept.
pub fn trim_final_label(text: &str) -> String {
    let t = text.trim();
    t.strip_suffix('.').unwrap_or(t).trim_end().to_owned()
}

/// Lowercase dictionary form of an extracted label: trailing punctuation and
/// parenthesized suffixes removed.
pub fn normalize_extracted_label(text: &str) -> Result<String> {
    let strip = |s: &str| {
        s.trim()
            .trim_end_matches(['.', ',', ';', ':', '!', '?', '"', '\''])
            .trim()
            .to_owned()
    };
    let label = strip(&normalize_label(&strip(text)));
    if label.is_empty() {
        return Err(Error::Transport(TransportError::EmptyResponse));
    }
    Ok(label)
}

pub struct Orchestrator<'a> {
    transport: &'a dyn Transport,
    prompts: PromptSet,
    policy: RetryPolicy,
    sleeper: &'a dyn Sleeper,
}

static THREAD_SLEEPER: ThreadSleeper = ThreadSleeper;

impl<'a> Orchestrator<'a> {
    pub fn new(transport: &'a dyn Transport, prompts: PromptSet, policy: RetryPolicy) -> Self {
        Self {
            transport,
            prompts,
            policy,
            sleeper: &THREAD_SLEEPER,
        }
    }

    pub fn with_sleeper(mut self, sleeper: &'a dyn Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    fn call(&self, messages: Vec<ChatMessage>) -> Result<String> {
        let request = ChatRequest::new(messages)?;
        call_with_retry(self.transport, &request, &self.policy, self.sleeper)
    }

    pub fn run_pipeline(&self, case: &Case, scenario: Scenario) -> Result<PipelineOutput> {
        if case.image_ids.is_empty() {
            return Err(Error::InvalidInput(format!(
                "case `{}` has no images",
                case.encounter_id
            )));
        }
        let p = &self.prompts;
        let images = case.image_ids.clone();
        let query = case.query_text.trim();

        if scenario == Scenario::Img1Call {
            let out = self.call(vec![
                ChatMessage::system(&p.one_call_system),
                ChatMessage::user("", images),
            ])?;
            let label = trim_final_label(&parse_answer_line(&out)?);
            return Ok(PipelineOutput {
                final_label: label,
                stage_outputs: vec![out],
            });
        }

        let first = match scenario {
            Scenario::ImgPlusText => vec![
                ChatMessage::system(&p.differential_with_info_system),
                ChatMessage::user(format!("Additional information: {query}"), images),
            ],
            _ => vec![
                ChatMessage::system(&p.differential_system),
                ChatMessage::user("", images),
            ],
        };
        let differential = self.call(first)?;

        let second = match scenario {
            Scenario::ImgThenText => vec![
                ChatMessage::system(&p.reformat_with_info_system),
                ChatMessage::user(
                    format!("Differentials:\n\n{differential}\n\nAdditional information: {query}"),
                    Vec::new(),
                ),
            ],
            _ => vec![
                ChatMessage::system(&p.reformat_system),
                ChatMessage::user(differential.clone(), Vec::new()),
            ],
        };
        let answer = self.call(second)?;
        Ok(PipelineOutput {
            final_label: trim_final_label(&answer),
            stage_outputs: vec![differential, answer],
        })
    }

    /// Runs every case with at most `concurrency` cases in flight. Results
    /// keep the input order.
    pub fn run_cases(
        &self,
        cases: &[Case],
        scenario: Scenario,
        concurrency: usize,
    ) -> Vec<Result<PipelineOutput>> {
        let workers = concurrency.max(1).min(cases.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<PipelineOutput>>>> =
            cases.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= cases.len() {
                        break;
                    }
                    let out = self.run_pipeline(&cases[i], scenario);
                    *slots[i].lock().expect("result slot") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| {
                m.into_inner()
                    .expect("result slot")
                    .expect("every case ran")
            })
            .collect()
    }

    pub fn extract_label(&self, discussion: &str) -> Result<String> {
        if discussion.trim().is_empty() {
            return Err(Error::InvalidInput("discussion is empty".into()));
        }
        let out = self.call(vec![
            ChatMessage::system(&self.prompts.label_extraction_system),
            ChatMessage::user(discussion, Vec::new()),
        ])?;
        normalize_extracted_label(&out)
    }
}

pub fn run_pipeline(
    case: &Case,
    cfg: &ScenarioConfig,
    transport: &dyn Transport,
) -> Result<PipelineOutput> {
    let prompts = PromptSet::resolve(&cfg.prompt_set)?;
    Orchestrator::new(transport, prompts, cfg.retry_policy()).run_pipeline(case, cfg.scenario)
}

pub fn extract_label_from_discussion(
    discussion: &str,
    transport: &dyn Transport,
) -> Result<String> {
    Orchestrator::new(transport, PromptSet::builtin(), RetryPolicy::default())
        .extract_label(discussion)
}
