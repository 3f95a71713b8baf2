//! HTTP chat-completion backend.
//!
//! Wire format: POST a JSON body with a single user message, temperature and
//! max_tokens; read `choices[0].message.content` back. Transient failures
//! (timeouts, 429, 5xx) retry with exponential backoff; auth rejections are
//! fatal immediately; a `length` finish reason surfaces as truncation. The
//! credential comes exclusively from the `DX_API_KEY` environment variable.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::retry::{run_with_retry, Attempt, RetryPolicy};
use super::{Backend, CompletionRequest, CompletionResult, GatewayError, API_KEY_ENV, API_URL_ENV};

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        retry: RetryPolicy,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            retry,
        }
    }

    /// Endpoint from the flag or `DX_API_URL`; credential from `DX_API_KEY`.
    pub fn from_env(endpoint_flag: Option<String>) -> Result<Self, GatewayError> {
        let endpoint = endpoint_flag
            .or_else(|| std::env::var(API_URL_ENV).ok())
            .ok_or_else(|| {
                GatewayError::Protocol(format!("no endpoint: pass --api-url or set {API_URL_ENV}"))
            })?;
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(endpoint, api_key, RetryPolicy::default()))
    }

    fn attempt_once(&self, request: &CompletionRequest) -> Attempt<String> {
        let payload = json!({
            "model": request.model_name,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let sent = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send_json(&payload);
        match sent {
            Ok(response) => match response.into_body().read_json::<Value>() {
                Ok(body) => parse_completion_body(&body),
                Err(err) => Attempt::Transient(format!("unreadable response body: {err}")),
            },
            Err(err) => classify_transport_error(err),
        }
    }
}

fn classify_transport_error(err: ureq::Error) -> Attempt<String> {
    match err {
        ureq::Error::StatusCode(code) => match code {
            401 | 403 => Attempt::Fatal(GatewayError::Auth(format!("status {code}"))),
            408 | 429 | 500..=599 => Attempt::Transient(format!("status {code}")),
            other => Attempt::Fatal(GatewayError::Protocol(format!("status {other}"))),
        },
        ureq::Error::Timeout(t) => Attempt::Transient(format!("timeout: {t}")),
        ureq::Error::Io(io) => Attempt::Transient(format!("io error: {io}")),
        ureq::Error::ConnectionFailed => Attempt::Transient("connection failed".into()),
        ureq::Error::HostNotFound => Attempt::Transient("host not found".into()),
        other => Attempt::Fatal(GatewayError::Protocol(other.to_string())),
    }
}

fn parse_completion_body(body: &Value) -> Attempt<String> {
    let choice = &body["choices"][0];
    if choice["finish_reason"].as_str() == Some("length") {
        return Attempt::Fatal(GatewayError::ResponseTruncated);
    }
    match choice["message"]["content"].as_str() {
        Some(text) => Attempt::Done(text.to_string()),
        None => Attempt::Fatal(GatewayError::Protocol(
            "response missing choices[0].message.content".into(),
        )),
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let start = Instant::now();
        let (raw_text, attempt_count) = run_with_retry(
            &self.retry,
            |_| self.attempt_once(request),
            std::thread::sleep,
        )?;
        Ok(CompletionResult {
            raw_text,
            latency_ms: start.elapsed().as_millis() as u64,
            attempt_count,
        })
    }

    fn identity(&self) -> String {
        format!("http({})", self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_body_happy_path() {
        let body = json!({
            "choices": [{ "message": { "content": "gout, cellulitis" }, "finish_reason": "stop" }]
        });
        match parse_completion_body(&body) {
            Attempt::Done(text) => assert_eq!(text, "gout, cellulitis"),
            _ => panic!("expected Done"),
        }
    }

    #[test]
    fn length_finish_reason_is_truncation() {
        let body = json!({
            "choices": [{ "message": { "content": "partial" }, "finish_reason": "length" }]
        });
        assert!(matches!(
            parse_completion_body(&body),
            Attempt::Fatal(GatewayError::ResponseTruncated)
        ));
    }

    #[test]
    fn missing_content_is_protocol_error() {
        let body = json!({ "choices": [] });
        assert!(matches!(
            parse_completion_body(&body),
            Attempt::Fatal(GatewayError::Protocol(_))
        ));
    }

    #[test]
    fn status_classification() {
        assert!(matches!(
            classify_transport_error(ureq::Error::StatusCode(401)),
            Attempt::Fatal(GatewayError::Auth(_))
        ));
        assert!(matches!(
            classify_transport_error(ureq::Error::StatusCode(429)),
            Attempt::Transient(_)
        ));
        assert!(matches!(
            classify_transport_error(ureq::Error::StatusCode(503)),
            Attempt::Transient(_)
        ));
        assert!(matches!(
            classify_transport_error(ureq::Error::StatusCode(404)),
            Attempt::Fatal(GatewayError::Protocol(_))
        ));
    }
}
