use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::transport::Transport;
use super::ChatRequest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`: doubling from
    /// the base, capped.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let shift = attempt.saturating_sub(1).min(32);
        self.backoff_base_ms
            .saturating_mul(1u64 << shift)
            .min(self.max_backoff_ms)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, ms: u64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _ms: u64) {}
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    pub delays: Mutex<Vec<u64>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, ms: u64) {
        self.delays.lock().expect("sleeper lock").push(ms);
    }
}

/// Calls `transport` until it succeeds, a non-retryable error occurs, or
/// `max_attempts` calls have been made.
pub fn call_with_retry(
    transport: &dyn Transport,
    request: &ChatRequest,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<String> {
    let max = policy.max_attempts.max(1);
    let mut schedule = Vec::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match transport.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if !e.is_retryable() => return Err(Error::Transport(e)),
            Err(e) if attempt >= max => {
                return Err(Error::RetriesExhausted {
                    attempts: attempt,
                    backoff_ms: schedule,
                    last: e,
                })
            }
            Err(_) => {
                let delay = policy.delay_ms(attempt);
                schedule.push(delay);
                sleeper.sleep(delay);
            }
        }
    }
}
