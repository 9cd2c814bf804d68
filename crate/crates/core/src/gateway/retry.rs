use std::sync::Mutex;
use std::time::Duration;

use super::GatewayError;

/// Hard ceiling on attempts, whatever the configuration says.
pub const MAX_ATTEMPTS: u32 = 5;
/// Hard ceiling on the summed backoff delay of one call.
pub const MAX_TOTAL_DELAY: Duration = Duration::from_secs(31);

/// Exponential backoff: the wait after failed attempt `k` (1-based) is
/// `base * factor^(k-1)`, capped so the sum never exceeds [`MAX_TOTAL_DELAY`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    max_attempts: u32,
    base: Duration,
    factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: MAX_ATTEMPTS,
            base: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, base: Duration, factor: f64) -> Self {
        RetryPolicy {
            max_attempts: max_attempts.clamp(1, MAX_ATTEMPTS),
            base,
            factor: factor.max(1.0),
        }
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    /// Delays slept between attempts, in order. Length is `max_attempts - 1`.
    pub fn schedule(&self) -> Vec<Duration> {
        let mut remaining = MAX_TOTAL_DELAY;
        (0..self.max_attempts.saturating_sub(1))
            .map(|k| {
                let raw = self.base.as_secs_f64() * self.factor.powi(k as i32);
                let d = Duration::from_secs_f64(raw.min(remaining.as_secs_f64()));
                remaining = remaining.saturating_sub(d);
                d
            })
            .collect()
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested sleeps without sleeping. For tests and dry runs.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    slept: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn slept(&self) -> Vec<Duration> {
        self.slept.lock().expect("sleeper lock").clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.slept.lock().expect("sleeper lock").push(d);
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// policy runs out of attempts. Returns the value and the number of retries.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut op: impl FnMut(u32) -> Result<T, GatewayError>,
) -> Result<(T, u32), GatewayError> {
    let schedule = policy.schedule();
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt - 1)),
            Err(e) if e.is_retryable() => {
                if attempt >= policy.max_attempts {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: e.to_string(),
                    });
                }
                let delay = schedule[(attempt - 1) as usize];
                log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                sleeper.sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
