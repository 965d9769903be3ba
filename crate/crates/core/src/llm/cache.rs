//! Content-addressed prompt/reply store.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{LlmBackend, LlmError, PromptRequest};

/// Serves replies from `dir` and records new ones from `inner`.
///
/// Without an inner backend every miss is [`LlmError::CacheMiss`], which is
/// how offline replays are enforced.
pub struct CachedBackend {
    dir: PathBuf,
    inner: Option<Box<dyn LlmBackend>>,
}

impl CachedBackend {
    pub fn new(dir: impl Into<PathBuf>, inner: Option<Box<dyn LlmBackend>>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, inner })
    }

    pub fn key(req: &PromptRequest) -> String {
        hex::encode(Sha256::digest(req.rendered_text.as_bytes()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, text: &str) -> Result<(), LlmError> {
        // Write then rename so concurrent readers never see a partial file.
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!("{name}.{}.tmp", std::process::id()));
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))
    }
}

impl LlmBackend for CachedBackend {
    fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        let key = Self::key(req);
        let reply_path = self.dir.join(format!("{key}.reply.txt"));
        if let Ok(text) = fs::read_to_string(&reply_path) {
            return Ok(text);
        }
        let Some(inner) = &self.inner else {
            return Err(LlmError::CacheMiss(key));
        };
        let reply = inner.complete(req)?;
        self.write(&format!("{key}.prompt.txt"), &req.rendered_text)?;
        self.write(&format!("{key}.reply.txt"), &reply)?;
        Ok(reply)
    }

    fn name(&self) -> &'static str {
        "cached"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, TemplateId};

    #[test]
    fn records_then_replays_offline() {
        let dir = tempfile::tempdir().unwrap();
        let req = PromptRequest::new(TemplateId::SsDep, "hello".into());
        let online = CachedBackend::new(dir.path(), Some(Box::new(MockBackend::new()))).unwrap();
        let first = online.complete(&req).unwrap();
        let key = CachedBackend::key(&req);
        assert_eq!(key.len(), 64);
        assert!(dir.path().join(format!("{key}.prompt.txt")).exists());
        assert!(dir.path().join(format!("{key}.reply.txt")).exists());

        let offline = CachedBackend::new(dir.path(), None).unwrap();
        assert_eq!(offline.complete(&req).unwrap(), first);
        let other = PromptRequest::new(TemplateId::SsDep, "other".into());
        assert!(matches!(offline.complete(&other), Err(LlmError::CacheMiss(_))));
    }
}
