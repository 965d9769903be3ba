//! Settings from an optional TOML file, overridden by flags.
//!
//! ```toml
//! spec = "api.yaml"
//! output_dir = "out"
//! seed = 7
//! base_url = "http://127.0.0.1:8080"
//! workers = 4
//! timeout_ms = 10000
//! auth_headers = ["Authorization: Bearer abc"]
//! element_choice = "first"   # or "random"
//!
//! [llm]
//! backend = "mock"           # or "remote"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-3.5-turbo-1106"
//! api_key_env = "OPENAI_API_KEY"
//! max_in_flight = 2
//! timeout_ms = 60000
//! cache_dir = "out/llm-cache"
//! offline = false
//! ```
//!
//! Relative paths in the file resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use restdep_core::llm::{BackendConfig, BackendKind};
use restdep_core::runner::{DEFAULT_TIMEOUT_MS, DEFAULT_WORKERS};
use restdep_core::sequence::ElementChoice;
use serde::Deserialize;

use crate::GlobalArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub spec: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub base_url: Option<String>,
    pub workers: Option<usize>,
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub auth_headers: Vec<String>,
    pub element_choice: Option<ElementChoice>,
    #[serde(default)]
    pub llm: LlmSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub offline: bool,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.spec);
        rebase(&mut cfg.output_dir);
        rebase(&mut cfg.llm.cache_dir);
        Ok(cfg)
    }
}

/// Everything a subcommand needs, after merging file and flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub spec: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub base_url: Option<String>,
    pub workers: usize,
    pub timeout_ms: u64,
    pub auth_headers: Vec<(String, String)>,
    pub element_choice: ElementChoice,
    pub backend: BackendConfig,
    pub cache_dir: PathBuf,
    pub offline: bool,
}

fn split_header(raw: &str) -> Result<(String, String)> {
    match raw.split_once(':') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => bail!("auth header `{raw}` is not in `name: value` form"),
    }
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let output_dir = args.out.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from("restdep-out"));
        let llm = file.llm;
        let mut backend = match args.backend.map(BackendKind::from).or(llm.backend).unwrap_or_default() {
            BackendKind::Mock => BackendConfig::mock(),
            BackendKind::Remote => BackendConfig {
                kind: BackendKind::Remote,
                endpoint: args.endpoint.clone().or(llm.endpoint),
                model_name: args.model.clone().or(llm.model),
                api_key_ref: args.api_key_env.clone().or(llm.api_key_env),
                ..BackendConfig::mock()
            },
        };
        if let Some(n) = llm.max_in_flight {
            backend.max_in_flight = n;
        }
        if let Some(ms) = llm.timeout_ms {
            backend.timeout_ms = ms;
        }
        let auth_headers = file
            .auth_headers
            .iter()
            .chain(&args.auth_header)
            .map(|h| split_header(h))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: args.spec.clone().or(file.spec),
            cache_dir: args
                .cache_dir
                .clone()
                .or(llm.cache_dir)
                .unwrap_or_else(|| output_dir.join("llm-cache")),
            output_dir,
            seed: args.seed.or(file.seed).unwrap_or(0),
            base_url: args.base_url.clone().or(file.base_url),
            workers: args.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS),
            timeout_ms: args.timeout_ms.or(file.timeout_ms).unwrap_or(DEFAULT_TIMEOUT_MS),
            auth_headers,
            element_choice: if args.random_element {
                ElementChoice::Random
            } else {
                file.element_choice.unwrap_or_default()
            },
            backend,
            offline: args.offline || llm.offline,
        })
    }
}
