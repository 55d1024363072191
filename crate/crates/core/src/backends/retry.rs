use std::thread;
use std::time::Duration;

use super::BackendError;

/// Bounded retry on transport errors with a fixed pause between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 2, backoff: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { retries: 0, backoff: Duration::ZERO }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(err) if err.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %err, "retrying backend call");
                    if !self.backoff.is_zero() {
                        thread::sleep(self.backoff);
                    }
                }
                other => return other,
            }
        }
    }
}
