use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{Backend, BackendError, Completion, CompletionRequest, FinishReason, Usage};

/// Raw HTTP reply as seen by [`HttpBackend`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

/// Minimal POST-JSON transport. Swappable so the protocol can be tested
/// without a network.
pub trait Transport: Send + Sync {
    /// Connection-level failures map to `BackendError::Transport`.
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, BackendError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, BackendError> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpResponse {
            status,
            body,
            retry_after,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, err: &BackendError) -> Duration {
        if let BackendError::RateLimited { after: Some(after) } = err {
            return (*after).min(self.max_delay);
        }
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

/// Client for OpenAI-compatible chat completion endpoints.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self::with_transport(base_url, api_key, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(
        base_url: &str,
        api_key: Option<String>,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            url: chat_url(base_url),
            api_key,
            transport,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// JSON body for `request`. At temperature 0 a single choice is requested
    /// and replicated, which makes identical samples a guarantee.
    pub fn request_body(request: &CompletionRequest) -> Value {
        let n = if request.temperature == 0.0 {
            1
        } else {
            request.n_samples
        };
        json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "n": n,
            "max_tokens": request.max_tokens,
            "stop": request.stop_sequences,
        })
    }

    fn attempt(
        &self,
        request: &CompletionRequest,
        body: &str,
    ) -> Result<Vec<Completion>, BackendError> {
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let resp = self.transport.post_json(&self.url, &headers, body)?;
        match resp.status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(excerpt(&resp.body))),
            429 => {
                return Err(BackendError::RateLimited {
                    after: resp.retry_after,
                })
            }
            500..=599 => {
                return Err(BackendError::Transport(format!(
                    "HTTP {}: {}",
                    resp.status,
                    excerpt(&resp.body)
                )))
            }
            s => {
                return Err(BackendError::Protocol(format!(
                    "HTTP {s}: {}",
                    excerpt(&resp.body)
                )))
            }
        }
        parse_choices(&resp.body, request)
    }
}

fn chat_url(base: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

fn parse_choices(body: &str, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError> {
    let protocol = |what: &str| BackendError::Protocol(format!("{what}: {}", excerpt(body)));
    let value: Value = serde_json::from_str(body).map_err(|_| protocol("invalid JSON"))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("missing `choices`"))?;
    let usage = value.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });

    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, choice) in choices.iter().enumerate() {
        let index = choice
            .get("index")
            .and_then(Value::as_u64)
            .unwrap_or(pos as u64);
        let text = match choice.pointer("/message/content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) => String::new(),
            _ => return Err(protocol("choice without `message.content`")),
        };
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        indexed.push((
            index,
            Completion {
                text,
                finish_reason,
                usage,
            },
        ));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let mut out: Vec<Completion> = indexed.into_iter().map(|(_, c)| c).collect();

    let n = request.n_samples as usize;
    if request.temperature == 0.0 && out.len() == 1 {
        out = vec![out[0].clone(); n];
    }
    if out.len() != n {
        return Err(protocol(&format!(
            "expected {n} choices, got {}",
            out.len()
        )));
    }
    Ok(out)
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, BackendError> {
        request.validate()?;
        let body = Self::request_body(request).to_string();
        let mut attempt = 0;
        loop {
            match self.attempt(request, &body) {
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let delay = self.retry.delay(attempt, &e);
                    warn!(error = %e, attempt, ?delay, "retrying completion request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn kind(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    type Request = (String, Vec<(String, String)>, String);

    /// Replays canned responses and records every request.
    struct StubTransport {
        replies: Mutex<Vec<Result<HttpResponse, BackendError>>>,
        seen: Mutex<Vec<Request>>,
    }

    impl StubTransport {
        fn new(replies: Vec<Result<HttpResponse, BackendError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                seen: Mutex::new(Vec::new()),
            })
        }

        fn calls(&self) -> usize {
            self.seen.lock().unwrap().len()
        }
    }

    impl Transport for StubTransport {
        fn post_json(
            &self,
            url: &str,
            headers: &[(String, String)],
            body: &str,
        ) -> Result<HttpResponse, BackendError> {
            self.seen
                .lock()
                .unwrap()
                .push((url.into(), headers.to_vec(), body.into()));
            self.replies
                .lock()
                .unwrap()
                .pop()
                .expect("stub ran out of replies")
        }
    }

    fn ok(body: Value) -> Result<HttpResponse, BackendError> {
        Ok(HttpResponse {
            status: 200,
            body: body.to_string(),
            retry_after: None,
        })
    }

    fn status(code: u16) -> Result<HttpResponse, BackendError> {
        Ok(HttpResponse {
            status: code,
            body: "{\"error\":\"nope\"}".into(),
            retry_after: None,
        })
    }

    fn no_wait() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn backend(stub: &Arc<StubTransport>) -> HttpBackend {
        HttpBackend::with_transport("http://localhost:8000/", Some("k".into()), stub.clone())
            .with_retry(no_wait())
    }

    fn choices(texts: &[&str]) -> Value {
        json!({
            "choices": texts.iter().enumerate().map(|(i, t)| json!({
                "index": i, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"
            })).collect::<Vec<_>>(),
            "usage": {"prompt_tokens": 10, "completion_tokens": 2}
        })
    }

    #[test]
    fn wire_format() {
        let stub = StubTransport::new(vec![ok(choices(&["a", "b"]))]);
        let b = backend(&stub);
        let req = CompletionRequest::new("hello", "gpt-3.5-turbo")
            .with_samples(2)
            .with_temperature(0.7);
        let out = b.complete(&req).unwrap();
        assert_eq!(out[0].text, "a");
        assert_eq!(out[1].text, "b");
        assert_eq!(out[0].usage.unwrap().prompt_tokens, 10);

        let seen = stub.seen.lock().unwrap();
        let (url, headers, body) = &seen[0];
        assert_eq!(url, "http://localhost:8000/v1/chat/completions");
        assert_eq!(headers[0], ("Authorization".into(), "Bearer k".into()));
        let body: Value = serde_json::from_str(body).unwrap();
        assert_eq!(
            body,
            json!({"model": "gpt-3.5-turbo", "messages": [{"role": "user", "content": "hello"}],
                   "temperature": 0.7, "n": 2, "max_tokens": 512, "stop": []})
        );
    }

    #[test]
    fn choices_are_ordered_by_index() {
        let body = json!({"choices": [
            {"index": 1, "message": {"content": "second"}},
            {"index": 0, "message": {"content": "first"}},
        ]});
        let stub = StubTransport::new(vec![ok(body)]);
        let req = CompletionRequest::new("p", "m")
            .with_samples(2)
            .with_temperature(1.0);
        let out = backend(&stub).complete(&req).unwrap();
        assert_eq!(out[0].text, "first");
    }

    #[test]
    fn temperature_zero_requests_one_and_replicates() {
        let stub = StubTransport::new(vec![ok(choices(&["same"]))]);
        let req = CompletionRequest::new("p", "m").with_samples(3);
        let out = backend(&stub).complete(&req).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.text == "same"));
        let body: Value = serde_json::from_str(&stub.seen.lock().unwrap()[0].2).unwrap();
        assert_eq!(body["n"], 1);
    }

    #[test]
    fn retries_transport_and_rate_limit_then_succeeds() {
        let stub = StubTransport::new(vec![
            Err(BackendError::Transport("reset".into())),
            Ok(HttpResponse {
                status: 429,
                body: String::new(),
                retry_after: Some(Duration::from_secs(1)),
            }),
            status(503),
            ok(choices(&["done"])),
        ]);
        let out = backend(&stub)
            .complete(&CompletionRequest::new("p", "m"))
            .unwrap();
        assert_eq!(out[0].text, "done");
        assert_eq!(stub.calls(), 4);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let stub = StubTransport::new((0..4).map(|_| status(502)).collect());
        let err = backend(&stub)
            .complete(&CompletionRequest::new("p", "m"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
        assert_eq!(stub.calls(), 4);
    }

    #[test]
    fn auth_and_protocol_errors_are_not_retried() {
        let stub = StubTransport::new(vec![status(401)]);
        let err = backend(&stub)
            .complete(&CompletionRequest::new("p", "m"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Auth(_)));
        assert_eq!(stub.calls(), 1);

        let stub = StubTransport::new(vec![status(400)]);
        let err = backend(&stub)
            .complete(&CompletionRequest::new("p", "m"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Protocol(ref s) if s.contains("nope")));
        assert_eq!(stub.calls(), 1);

        let stub = StubTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: "not json".into(),
            retry_after: None,
        })]);
        assert!(matches!(
            backend(&stub).complete(&CompletionRequest::new("p", "m")),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn wrong_choice_count_is_protocol_error() {
        let stub = StubTransport::new(vec![ok(choices(&["a", "b"]))]);
        let req = CompletionRequest::new("p", "m")
            .with_samples(3)
            .with_temperature(0.5);
        assert!(matches!(
            backend(&stub).complete(&req),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn url_normalization() {
        assert_eq!(chat_url("http://h/v1"), "http://h/v1/chat/completions");
        assert_eq!(
            chat_url("http://h/v1/chat/completions"),
            "http://h/v1/chat/completions"
        );
        assert_eq!(chat_url("http://h"), "http://h/v1/chat/completions");
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy::default();
        let t = BackendError::Transport(String::new());
        assert_eq!(p.delay(0, &t), Duration::from_millis(500));
        assert_eq!(p.delay(2, &t), Duration::from_secs(2));
        assert_eq!(p.delay(20, &t), Duration::from_secs(30));
        let rl = BackendError::RateLimited {
            after: Some(Duration::from_secs(7)),
        };
        assert_eq!(p.delay(0, &rl), Duration::from_secs(7));
    }
}
