//! Clock abstraction and a sliding-window rate limiter.
//!
//! All waiting goes through [`Clock::sleep`] so tests can drive retry and
//! rate-limit behavior with a virtual clock.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary fixed origin.
    fn now_millis(&self) -> u64;
    fn sleep(&self, duration: Duration);
}

/// Wall-clock time, origin at construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A clock that only advances when slept on. Sleeping zero still advances by
/// one millisecond so waiting loops always make progress.
pub struct VirtualClock {
    now: Mutex<u64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self { now: Mutex::new(0) }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now_millis(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += (duration.as_millis() as u64).max(1);
    }
}

/// Sliding-window limiter: at most `per_sec` dispatches in any 1s window.
pub struct RateLimiter {
    per_sec: u32,
    window: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(per_sec: u32) -> Self {
        Self {
            per_sec: per_sec.max(1),
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (via the clock) until a dispatch slot is free, then claims it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let now = clock.now_millis();
                let mut window = self.window.lock().unwrap();
                while window.front().is_some_and(|&t| t + 1000 <= now) {
                    window.pop_front();
                }
                if (window.len() as u32) < self.per_sec {
                    window.push_back(now);
                    return;
                }
                window.front().unwrap() + 1000 - now
            };
            clock.sleep(Duration::from_millis(wait.max(1)));
        }
    }
}
