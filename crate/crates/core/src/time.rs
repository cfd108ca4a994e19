use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECOND_MS: i64 = 1_000;
pub const MINUTE_MS: i64 = 60 * SECOND_MS;
pub const HOUR_MS: i64 = 60 * MINUTE_MS;
pub const DAY_MS: i64 = 24 * HOUR_MS;

/// Floors `t` to a multiple of `width` (also for negative `t`).
pub fn align_down(t: i64, width: i64) -> i64 {
    t.div_euclid(width) * width
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid window: start {start_ms} must be before end {end_ms}")]
pub struct WindowError {
    pub start_ms: i64,
    pub end_ms: i64,
}

/// Half-open interval `[start_ms, end_ms)` in UTC milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr")]
pub struct TimeWindow {
    pub start_ms: i64,
    pub end_ms: i64,
}

#[derive(Deserialize)]
struct WindowRepr {
    start_ms: i64,
    end_ms: i64,
}

impl TryFrom<WindowRepr> for TimeWindow {
    type Error = WindowError;

    fn try_from(value: WindowRepr) -> Result<Self, Self::Error> {
        TimeWindow::new(value.start_ms, value.end_ms)
    }
}

impl TimeWindow {
    pub fn new(start_ms: i64, end_ms: i64) -> Result<Self, WindowError> {
        if start_ms < end_ms {
            Ok(Self { start_ms, end_ms })
        } else {
            Err(WindowError { start_ms, end_ms })
        }
    }

    /// Every representable capture timestamp.
    pub fn all() -> Self {
        Self {
            start_ms: 0,
            end_ms: i64::MAX,
        }
    }

    /// The `duration_ms` immediately preceding `now_ms`.
    pub fn trailing(now_ms: i64, duration_ms: i64) -> Self {
        Self {
            start_ms: now_ms.saturating_sub(duration_ms.max(1)),
            end_ms: now_ms,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start_ms <= t && t < self.end_ms
    }

    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }

    pub fn covers(&self, other: &TimeWindow) -> bool {
        self.start_ms <= other.start_ms && other.end_ms <= self.end_ms
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to. Used by tests and replays.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(now_ms: i64) -> Self {
        Self(AtomicI64::new(now_ms))
    }

    pub fn set(&self, now_ms: i64) {
        self.0.store(now_ms, Ordering::SeqCst);
    }

    pub fn advance(&self, delta_ms: i64) {
        self.0.fetch_add(delta_ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}
