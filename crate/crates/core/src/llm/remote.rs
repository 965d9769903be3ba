//! Chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, InFlight, LlmBackend, LlmError, PromptRequest};

const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";

pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    gate: InFlight,
    backoff: Duration,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Reads the API key from the environment variable named by
    /// `api_key_ref`.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let var = cfg.api_key_ref.clone().unwrap_or_default();
        let api_key = std::env::var(&var)
            .map_err(|_| LlmError::Config(format!("environment variable `{var}` is not set")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model_name.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            api_key,
            gate: InFlight::new(cfg.max_in_flight),
            backoff: Duration::from_millis(250),
        })
    }

    fn attempt(&self, req: &PromptRequest) -> Result<String, Attempt> {
        let body = json!({
            "model": self.model,
            "temperature": req.temperature,
            "messages": [{"role": "user", "content": req.rendered_text}],
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            401 | 403 => Err(Attempt::Fatal(LlmError::Auth(format!("HTTP {status}")))),
            200..=299 => {
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| Attempt::Fatal(LlmError::Transport(format!("reply is not JSON: {e}"))))?;
                v.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| {
                        Attempt::Fatal(LlmError::Transport("reply has no choices[0].message.content".into()))
                    })
            }
            _ => Err(Attempt::Retry(format!("HTTP {status}"))),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        self.gate.run(|| {
            let mut last = String::new();
            for attempt in 0..=req.max_retries {
                if attempt > 0 {
                    std::thread::sleep(self.backoff * attempt);
                }
                match self.attempt(req) {
                    Ok(text) => return Ok(text),
                    Err(Attempt::Fatal(e)) => return Err(e),
                    Err(Attempt::Retry(msg)) => {
                        log::warn!("model endpoint attempt {} failed: {msg}", attempt + 1);
                        last = msg;
                    }
                }
            }
            Err(LlmError::RetriesExhausted {
                attempts: req.max_retries + 1,
                last,
            })
        })
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}
