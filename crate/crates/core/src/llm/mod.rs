//! Language-model gateway.
//!
//! Prompts are rendered by [`prompts`], sent through an [`LlmBackend`], and
//! the replies are parsed by [`parse`]. [`MockBackend`] answers every
//! template deterministically from the prompt text alone, so the pipeline is
//! reproducible without a network. [`CachedBackend`] stores each
//! prompt/reply pair under its SHA-256 so runs can be replayed offline.

mod cache;
mod mock;
pub mod parse;
pub mod prompts;
mod remote;

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedBackend;
pub use mock::{mock_os_mappings, mock_schema_prerequisites, MockBackend};
pub use parse::{
    format_arrow_lines, parse_arrow_lines, parse_jsonl_dataset, parse_schema_list, ArrowMapping,
    Parsed, RawItem,
};
pub use prompts::{
    build_constraint_prompt, build_dataset_prompt, build_os_prompt, build_ss_prompt,
};
pub use remote::RemoteBackend;

/// Re-prompts allowed after an unparseable reply.
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("reply contained nothing parseable ({dropped} lines dropped)")]
    EmptyParse { dropped: usize },
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("no cached reply for prompt {0} and the backend is offline")]
    CacheMiss(String),
    #[error("cache i/o: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    OsDep,
    SsDep,
    Dataset,
    Constraints,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::OsDep => "os_dep",
            TemplateId::SsDep => "ss_dep",
            TemplateId::Dataset => "dataset",
            TemplateId::Constraints => "constraints",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub rendered_text: String,
    /// Always 0.0.
    pub temperature: f64,
    pub max_retries: u32,
}

impl PromptRequest {
    pub fn new(template_id: TemplateId, rendered_text: String) -> Self {
        debug_assert!(!rendered_text.is_empty());
        Self {
            template_id,
            rendered_text,
            temperature: 0.0,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    /// The same request with a one-line format reminder appended.
    pub fn with_reminder(&self) -> Self {
        let mut next = self.clone();
        next.rendered_text.push_str("\n\n");
        next.rendered_text.push_str(prompts::format_reminder(self.template_id));
        next
    }
}

/// Anything that can turn a prompt into completion text.
///
/// Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError>;

    fn name(&self) -> &'static str;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

pub fn complete(backend: &dyn LlmBackend, req: &PromptRequest) -> Result<String, LlmError> {
    backend.complete(req)
}

/// Send `req` and parse the reply, re-prompting with a format reminder each
/// time `parse` reports [`LlmError::EmptyParse`].
pub fn complete_parsed<T>(
    backend: &dyn LlmBackend,
    req: &PromptRequest,
    parse: impl Fn(&str) -> Result<T, LlmError>,
) -> Result<T, LlmError> {
    let mut current = req.clone();
    let mut last = String::new();
    for attempt in 0..=req.max_retries {
        let reply = backend.complete(&current)?;
        match parse(&reply) {
            Err(e @ LlmError::EmptyParse { .. }) => {
                log::debug!("{} reply unparseable on attempt {}", req.template_id.as_str(), attempt + 1);
                last = e.to_string();
                // Reminders accumulate, so every attempt is a distinct prompt.
                current = current.with_reminder();
            }
            other => return other,
        }
    }
    Err(LlmError::RetriesExhausted {
        attempts: req.max_retries + 1,
        last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

/// How to reach a language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable that holds the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_ref: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_llm_timeout")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    2
}

fn default_llm_timeout() -> u64 {
    60_000
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::mock()
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            api_key_ref: None,
            max_in_flight: default_in_flight(),
            timeout_ms: default_llm_timeout(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, api_key_ref: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            model_name: None,
            api_key_ref: Some(api_key_ref.into()),
            ..Self::mock()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Mock => Ok(()),
            BackendKind::Remote => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(LlmError::Config("remote backend needs an endpoint".into()));
                }
                if self.api_key_ref.as_deref().is_none_or(str::is_empty) {
                    return Err(LlmError::Config(
                        "remote backend needs the name of the API key variable".into(),
                    ));
                }
                if self.max_in_flight == 0 {
                    return Err(LlmError::Config("max_in_flight must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Build the backend, wrapped in a cache when `cache_dir` is set.
    ///
    /// With `offline`, the remote backend is never contacted and cache misses
    /// fail with [`LlmError::CacheMiss`].
    pub fn connect(
        &self,
        cache_dir: Option<PathBuf>,
        offline: bool,
    ) -> Result<Box<dyn LlmBackend>, LlmError> {
        self.validate()?;
        let inner: Option<Box<dyn LlmBackend>> = match (self.kind, offline) {
            (BackendKind::Mock, _) => Some(Box::new(MockBackend::new())),
            (BackendKind::Remote, true) => None,
            (BackendKind::Remote, false) => Some(Box::new(RemoteBackend::from_config(self)?)),
        };
        match (cache_dir, inner) {
            (Some(dir), inner) => Ok(Box::new(CachedBackend::new(dir, inner)?)),
            (None, Some(inner)) => Ok(inner),
            (None, None) => Err(LlmError::Config(
                "offline mode needs a cache directory".into(),
            )),
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
pub(crate) struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
            while *active >= self.limit {
                active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
            }
            *active += 1;
        }
        let out = f();
        *self.active.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}
