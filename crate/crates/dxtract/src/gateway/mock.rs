//! Deterministic mock backend.
//!
//! Replies are a pure function of (seed, prompt, run_index): the base label
//! subset is drawn from a generator keyed by seed and prompt hash, then
//! perturbed per run index with a configurable flip probability so majority
//! voting sees realistic disagreement. Repeating a corpus with the same seed
//! reproduces every byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, CompletionResult, GatewayError};

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    names: Vec<String>,
    flip_probability: f64,
    canned_reply: Option<String>,
    fail_marker: Option<String>,
}

impl MockBackend {
    /// Generator over the given pathology names (canonical, id order).
    pub fn new(seed: u64, names: Vec<String>) -> Self {
        Self {
            seed,
            names,
            flip_probability: 0.0,
            canned_reply: None,
            fail_marker: None,
        }
    }

    /// Per-run perturbation: with this probability each selected name is
    /// dropped, and with the same probability one extra name is added.
    pub fn with_flip_probability(mut self, p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "flip probability in [0, 1]");
        self.flip_probability = p;
        self
    }

    /// Always return exactly this text.
    pub fn canned(reply: impl Into<String>) -> Self {
        Self {
            seed: 0,
            names: Vec::new(),
            flip_probability: 0.0,
            canned_reply: Some(reply.into()),
            fail_marker: None,
        }
    }

    /// Fail (permanently) any request whose prompt contains the marker;
    /// exercises partial-batch failure paths.
    pub fn failing_on(mut self, marker: impl Into<String>) -> Self {
        self.fail_marker = Some(marker.into());
        self
    }

    fn rng_for(&self, prompt: &str, run_index: Option<u8>) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        if let Some(run) = run_index {
            hasher.update([0xFF, run]);
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 8];
        key.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(key))
    }

    fn fabricate_reply(&self, request: &CompletionRequest) -> String {
        // Base selection depends only on (seed, prompt).
        let mut base_rng = self.rng_for(&request.prompt, None);
        let mut selected: Vec<(usize, &'static str)> = Vec::new();
        if !self.names.is_empty() {
            let count = base_rng.random_range(0..=3usize.min(self.names.len()));
            while selected.len() < count {
                let idx = base_rng.random_range(0..self.names.len());
                if selected.iter().any(|&(i, _)| i == idx) {
                    continue;
                }
                let status = match base_rng.random::<f64>() {
                    x if x < 0.70 => "DEFINITE",
                    x if x < 0.90 => "POSSIBLE",
                    _ => "ABSENT",
                };
                selected.push((idx, status));
            }
            selected.sort_by_key(|&(i, _)| i);
        }

        // Per-run perturbation.
        if self.flip_probability > 0.0 && !self.names.is_empty() {
            let mut run_rng = self.rng_for(&request.prompt, Some(request.run_index));
            selected.retain(|_| run_rng.random::<f64>() >= self.flip_probability);
            if run_rng.random::<f64>() < self.flip_probability {
                let idx = run_rng.random_range(0..self.names.len());
                if !selected.iter().any(|&(i, _)| i == idx) {
                    selected.push((idx, "DEFINITE"));
                    selected.sort_by_key(|&(i, _)| i);
                }
            }
        }

        let mut reply = String::from(
            "I reviewed the impression against the pathology list.\nPathologyID,PathologyName,Word\n",
        );
        for &(idx, status) in &selected {
            reply.push_str(&format!("{},{},{}\n", idx + 1, self.names[idx], status));
        }
        reply.push_str("Those are all the findings that are explicitly named.\n");
        reply
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        if let Some(marker) = &self.fail_marker {
            if request.prompt.contains(marker.as_str()) {
                return Err(GatewayError::BackendUnavailable {
                    attempts: 1,
                    reason: format!("mock configured to fail on {marker:?}"),
                });
            }
        }
        let raw_text = match &self.canned_reply {
            Some(text) => text.clone(),
            None => self.fabricate_reply(request),
        };
        Ok(CompletionResult {
            raw_text,
            latency_ms: 0,
            attempt_count: 1,
        })
    }

    fn identity(&self) -> String {
        match &self.canned_reply {
            Some(_) => "mock(canned)".into(),
            None => format!("mock(seed={},flip={})", self.seed, self.flip_probability),
        }
    }
}
