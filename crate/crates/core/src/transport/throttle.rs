//! Writer-side bandwidth pacing.
//!
//! Each chunk reserves a transmission slot of `len / rate` seconds starting no
//! earlier than the end of the previous reservation. The writer sends the
//! chunk and then sleeps until its slot ends, so `n` bytes never take less
//! than `n / rate`. There is no burst allowance.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

/// Chunk size used when pacing frame bytes.
pub const CHUNK_SIZE: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThrottleConfig {
    Unlimited,
    /// Bytes per second, finite and positive.
    Rate(f64),
}

impl ThrottleConfig {
    pub fn rate(&self) -> Option<f64> {
        match *self {
            ThrottleConfig::Unlimited => None,
            ThrottleConfig::Rate(r) => Some(r),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            ThrottleConfig::Unlimited => true,
            ThrottleConfig::Rate(r) => r > 0.0 && r.is_finite(),
        }
    }
}

#[derive(Debug)]
struct Schedule {
    rate: f64,
    busy_until: Option<Instant>,
}

/// A pacing schedule. Clones share the same link, so several writers
/// throttled by one `Throttle` split its bandwidth.
#[derive(Debug, Clone)]
pub struct Throttle {
    inner: Option<Arc<Mutex<Schedule>>>,
}

impl Throttle {
    pub fn new(config: ThrottleConfig) -> Self {
        Throttle {
            inner: config.rate().map(|rate| {
                Arc::new(Mutex::new(Schedule {
                    rate,
                    busy_until: None,
                }))
            }),
        }
    }

    pub fn unlimited() -> Self {
        Throttle { inner: None }
    }

    pub fn is_limited(&self) -> bool {
        self.inner.is_some()
    }

    /// Reserves a slot for `bytes` and returns when it ends.
    pub fn reserve(&self, bytes: usize) -> Option<Instant> {
        let inner = self.inner.as_ref()?;
        let mut s = inner.lock().unwrap();
        let now = Instant::now();
        let start = match s.busy_until {
            Some(t) if t > now => t,
            _ => now,
        };
        let end = start + Duration::from_secs_f64(bytes as f64 / s.rate);
        s.busy_until = Some(end);
        Some(end)
    }
}

pub(crate) fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}
