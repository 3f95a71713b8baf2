//! Chat-completion backends behind one client contract.
//!
//! Two implementations exist: [`HttpBackend`] speaks the JSON chat-completion
//! wire format with retrying transport, and [`MockBackend`] fabricates
//! deterministic teacher replies for tests and offline runs. Batch execution
//! runs any backend with bounded parallelism and positionally aligned
//! results.

mod http;
mod mock;
mod retry;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

pub use http::HttpBackend;
pub use mock::MockBackend;
pub use retry::{run_with_retry, Attempt, RetryPolicy};

/// Environment variable holding the API credential. Credentials never travel
/// through flags or config files.
pub const API_KEY_ENV: &str = "DX_API_KEY";
/// Environment variable with the default endpoint URL.
pub const API_URL_ENV: &str = "DX_API_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub run_index: u8,
}

impl CompletionRequest {
    pub fn new(model_name: impl Into<String>, prompt: impl Into<String>, run_index: u8) -> Self {
        Self {
            model_name: model_name.into(),
            prompt: prompt.into(),
            temperature: 1.0,
            max_tokens: 1024,
            run_index,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Protocol("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Protocol("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// A backend reply, with the raw text recorded verbatim including any prose
/// around the structured part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("completion truncated (finish reason: length)")]
    ResponseTruncated,
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

/// A chat-completion backend. Implementations must be safe to call from
/// multiple threads; [`complete_batch`] relies on that.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;

    /// Stable identity string recorded in run manifests.
    fn identity(&self) -> String;
}

/// Run a batch with at most `max_in_flight` requests outstanding at any
/// instant. Results align positionally with the requests; per-item failures
/// are embedded without aborting the rest.
pub fn complete_batch(
    backend: &dyn Backend,
    requests: &[CompletionRequest],
    max_in_flight: usize,
) -> Vec<Result<CompletionResult, GatewayError>> {
    assert!(max_in_flight >= 1, "max_in_flight must be at least 1");
    let slots: Vec<Mutex<Option<Result<CompletionResult, GatewayError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let workers = max_in_flight.min(requests.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let outcome = backend.complete(&requests[i]);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
