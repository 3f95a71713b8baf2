//! Retry engine with exponential backoff, separated from the transport so the
//! retry contract is testable without a network.

use std::time::Duration;

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based attempt that just
    /// failed): base · 2^(attempt−1), capped. No jitter — runs stay
    /// reproducible.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// One attempt's outcome as classified by the transport.
pub enum Attempt<T> {
    Done(T),
    /// Not worth retrying (auth failures, malformed replies, truncation).
    Fatal(GatewayError),
    /// Transient (timeouts, 429, 5xx); retried until attempts run out.
    Transient(String),
}

/// Drive `op` until it succeeds, fails fatally, or exhausts the policy.
/// Returns the value and the number of attempts made. `sleep` is injected so
/// tests can observe the backoff schedule instead of waiting it out.
pub fn run_with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Attempt<T>,
    mut sleep: impl FnMut(Duration),
) -> Result<(T, u32), GatewayError> {
    let max_attempts = policy.max_attempts.max(1);
    let mut last_reason = String::new();
    for attempt in 1..=max_attempts {
        match op(attempt) {
            Attempt::Done(value) => return Ok((value, attempt)),
            Attempt::Fatal(err) => return Err(err),
            Attempt::Transient(reason) => {
                last_reason = reason;
                if attempt < max_attempts {
                    sleep(policy.delay_after(attempt));
                }
            }
        }
    }
    Err(GatewayError::BackendUnavailable {
        attempts: max_attempts,
        reason: last_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_sleep(_: Duration) {}

    #[test]
    fn transient_then_success_counts_attempts() {
        // 429 on the first try, 200 on the second.
        let policy = RetryPolicy::default();
        let (value, attempts) = run_with_retry(
            &policy,
            |attempt| {
                if attempt == 1 {
                    Attempt::Transient("status 429".into())
                } else {
                    Attempt::Done("ok")
                }
            },
            no_sleep,
        )
        .unwrap();
        assert_eq!(value, "ok");
        assert_eq!(attempts, 2);
    }

    #[test]
    fn exhaustion_reports_attempt_cap_and_last_reason() {
        let policy = RetryPolicy {
            max_attempts: 3,
            ..Default::default()
        };
        let err = run_with_retry::<()>(
            &policy,
            |attempt| Attempt::Transient(format!("status 503 (try {attempt})")),
            no_sleep,
        )
        .unwrap_err();
        match err {
            GatewayError::BackendUnavailable { attempts, reason } => {
                assert_eq!(attempts, 3);
                assert_eq!(reason, "status 503 (try 3)");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fatal_error_short_circuits() {
        let policy = RetryPolicy {
            max_attempts: 5,
            ..Default::default()
        };
        let mut calls = 0;
        let err = run_with_retry::<()>(
            &policy,
            |_| {
                calls += 1;
                Attempt::Fatal(GatewayError::Auth("bad key".into()))
            },
            no_sleep,
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Auth(_)));
        assert_eq!(calls, 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let policy = RetryPolicy {
            max_attempts: 6,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(600),
        };
        let mut delays = Vec::new();
        let _ = run_with_retry::<()>(
            &policy,
            |_| Attempt::Transient("x".into()),
            |d| delays.push(d.as_millis() as u64),
        );
        assert_eq!(delays, vec![100, 200, 400, 600, 600]);
    }

    #[test]
    fn no_sleep_after_final_attempt() {
        let policy = RetryPolicy {
            max_attempts: 2,
            ..Default::default()
        };
        let mut sleeps = 0;
        let _ = run_with_retry::<()>(&policy, |_| Attempt::Transient("x".into()), |_| sleeps += 1);
        assert_eq!(sleeps, 1);
    }
}
