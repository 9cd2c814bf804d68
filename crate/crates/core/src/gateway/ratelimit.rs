use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::Sleeper;

/// Token bucket refilled continuously at `per_minute / 60` tokens per second,
/// holding at most `per_minute` tokens.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(per_minute: u32) -> Self {
        let per_minute = per_minute.max(1) as f64;
        TokenBucket {
            capacity: per_minute,
            per_second: per_minute / 60.0,
            state: Mutex::new((per_minute, Instant::now())),
        }
    }

    /// Takes a token if one is available at `now`; otherwise returns how long
    /// to wait before one will be.
    pub fn try_take_at(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("bucket lock");
        let (tokens, last) = *state;
        let elapsed = now.saturating_duration_since(last).as_secs_f64();
        let tokens = (tokens + elapsed * self.per_second).min(self.capacity);
        if tokens >= 1.0 {
            *state = (tokens - 1.0, now.max(last));
            Ok(())
        } else {
            *state = (tokens, now.max(last));
            Err(Duration::from_secs_f64((1.0 - tokens) / self.per_second))
        }
    }

    pub fn acquire(&self, sleeper: &dyn Sleeper) {
        while let Err(wait) = self.try_take_at(Instant::now()) {
            sleeper.sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_throttle() {
        let bucket = TokenBucket::per_minute(30);
        let t0 = Instant::now();
        for _ in 0..30 {
            bucket.try_take_at(t0).unwrap();
        }
        let wait = bucket.try_take_at(t0).unwrap_err();
        assert!((wait.as_secs_f64() - 2.0).abs() < 1e-6, "{wait:?}");
        assert!(bucket.try_take_at(t0 + Duration::from_secs(2)).is_ok());
        assert!(bucket.try_take_at(t0 + Duration::from_secs(2)).is_err());
    }
}
