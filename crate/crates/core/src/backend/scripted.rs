use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{prompt_digest, Backend, BackendError, Completion, CompletionRequest};

/// How a script is matched against incoming prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptMatcher {
    Exact(String),
    /// Hex SHA-256 of the prompt text.
    Digest(String),
}

#[derive(Debug, Clone)]
struct Script {
    prompt: Option<String>,
    responses: Vec<String>,
}

/// Deterministic backend answering from registered scripts.
///
/// A request matching a script gets the registered responses cyclically, up
/// to `n_samples`. At temperature 0 every sample is the first response, so
/// the backend conforms to the identical-samples rule. Lookups are stateless:
/// the same request always returns the same completions.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    scripts: RwLock<BTreeMap<String, Script>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_script(
        &self,
        matcher: PromptMatcher,
        responses: Vec<String>,
    ) -> Result<(), BackendError> {
        if responses.is_empty() {
            return Err(BackendError::InvalidRequest(
                "a script needs at least one response".into(),
            ));
        }
        let (digest, prompt) = match matcher {
            PromptMatcher::Exact(p) => (prompt_digest(&p), Some(p)),
            PromptMatcher::Digest(d) => (d.to_ascii_lowercase(), None),
        };
        let mut scripts = self.scripts.write().expect("script table poisoned");
        if let Some(existing) = scripts.get_mut(&digest) {
            if existing.responses != responses {
                return Err(BackendError::DuplicateScript(digest));
            }
            if existing.prompt.is_none() {
                existing.prompt = prompt;
            }
            return Ok(());
        }
        scripts.insert(digest, Script { prompt, responses });
        Ok(())
    }

    /// Convenience for tests: exact-match registration.
    pub fn on(
        &self,
        prompt: impl Into<String>,
        response: impl Into<String>,
    ) -> Result<(), BackendError> {
        self.register_script(PromptMatcher::Exact(prompt.into()), vec![response.into()])
    }

    /// Number of `complete` calls served so far, including misses.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.scripts.read().expect("script table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_script_file(file: &ScriptFile) -> Result<Self, BackendError> {
        let backend = Self::new();
        for entry in &file.scripts {
            let matcher = match (&entry.prompt, &entry.digest) {
                (Some(p), _) => PromptMatcher::Exact(p.clone()),
                (None, Some(d)) => PromptMatcher::Digest(d.clone()),
                (None, None) => {
                    return Err(BackendError::InvalidRequest(
                        "script entry needs `prompt` or `digest`".into(),
                    ))
                }
            };
            backend.register_script(matcher, entry.responses.clone())?;
        }
        Ok(backend)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::from_script_file(&file)
    }

    /// Exports every script, ordered by digest.
    pub fn to_script_file(&self) -> ScriptFile {
        let scripts = self.scripts.read().expect("script table poisoned");
        ScriptFile {
            version: 1,
            scripts: scripts
                .iter()
                .map(|(digest, s)| ScriptEntry {
                    digest: s.prompt.is_none().then(|| digest.clone()),
                    prompt: s.prompt.clone(),
                    responses: s.responses.clone(),
                })
                .collect(),
        }
    }

    fn nearest(&self, digest: &str, prompt: &str) -> Option<String> {
        let scripts = self.scripts.read().expect("script table poisoned");
        let by_prompt = scripts
            .iter()
            .filter_map(|(d, s)| s.prompt.as_ref().map(|p| (common_prefix(p, prompt), d)))
            .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)));
        if let Some((_, d)) = by_prompt {
            return Some(d.clone());
        }
        scripts
            .keys()
            .map(|d| (common_prefix(d, digest), d))
            .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)))
            .map(|(_, d)| d.clone())
    }
}

fn common_prefix(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).take_while(|(x, y)| x == y).count()
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let digest = prompt_digest(&request.prompt);
        let responses = {
            let scripts = self.scripts.read().expect("script table poisoned");
            scripts.get(&digest).map(|s| s.responses.clone())
        };
        let Some(responses) = responses else {
            let nearest = self.nearest(&digest, &request.prompt);
            return Err(BackendError::ScriptMiss { digest, nearest });
        };
        let n = request.n_samples as usize;
        let out = if request.temperature == 0.0 {
            vec![Completion::stop(responses[0].clone()); n]
        } else {
            (0..n)
                .map(|i| Completion::stop(responses[i % responses.len()].clone()))
                .collect()
        };
        Ok(out)
    }

    fn kind(&self) -> &str {
        "scripted"
    }
}

/// On-disk script format: `{"version": 1, "scripts": [{"prompt"|"digest", "responses"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub version: u32,
    pub scripts: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub responses: Vec<String>,
}
