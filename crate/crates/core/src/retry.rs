use std::thread;
use std::time::Duration;

/// Exponential backoff: the first retry waits `base_delay`, each later one
/// `factor` times longer, for at most `max_attempts` calls in total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests and stub providers.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            factor: 2.0,
            max_attempts,
        }
    }

    /// Delay before attempt `attempt` (0-based); zero for the first.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            return Duration::ZERO;
        }
        self.base_delay.mul_f64(self.factor.powi(attempt as i32 - 1))
    }

    /// Runs `op` until it succeeds or attempts run out. On failure returns
    /// the last error and the number of attempts made.
    pub fn run<T, E: std::fmt::Display>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
    ) -> Result<T, (E, u32)> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            let wait = self.delay_before(attempt);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt + 1 >= attempts => return Err((e, attempt + 1)),
                Err(e) => log::warn!("attempt {} failed: {e}; retrying", attempt + 1),
            }
            attempt += 1;
        }
    }
}
